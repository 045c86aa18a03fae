//! Seeded random streams.
//!
//! Every random draw in the crate comes from [`ChaCha8Rng`]. A 64-bit seed
//! selects the key and a stream id selects one of its independent streams,
//! so a single per-image seed can feed several consumers without overlap.
//! Per-image seeds are derived from a master seed with [`substream_seed`].
//!
//! Uniform helpers below are written out explicitly (instead of relying on
//! `rand`'s range sampling) so the draw sequence is fixed by this file.

use rand::{RngCore, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

/// Stream used for sampling degradation parameters.
pub const STREAM_PARAMS: u64 = 0;
/// Stream used for Poisson shot noise.
pub const STREAM_NOISE: u64 = 1;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th substream of `master`.
pub fn substream_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

/// Uniform index in `0..n` (multiply-high reduction; bias below 2^-32 for
/// the small `n` used here).
pub fn index(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0, "index over empty range");
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}
