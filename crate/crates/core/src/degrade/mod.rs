//! Composite degradation model.
//!
//! An HR image `x` is turned into a noisy LR image
//!
//! ```text
//! y  = C( D(L_N(x; theta)) )        theta ~ p(theta)
//! y' = D(x)
//! ```
//!
//! where `L_N` is a Bernoulli-gated chain Gaussian blur -> motion blur ->
//! Poisson shot noise, `D` is antialiased bicubic downsampling and `C` is
//! DCT quantization. All randomness comes from a single per-image seed
//! (see [`crate::rng`]) so any result can be replayed from its
//! [`DegradationParams`].

mod compress;
mod kernel;
mod noise;
mod resize;

use std::f64::consts::PI;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use compress::{compress_sim, quant_table, quantized_blocks, LUMA_QUANT_TABLE};
pub use kernel::{convolve, gaussian_kernel, motion_kernel, Kernel};
pub use noise::poisson_noise;
pub use resize::{axis_taps, bicubic_resize, cubic, ResizePlan, Taps, CUBIC_A};

use crate::error::{ensure_arg, Result};
use crate::image::Image;
use crate::rng;

/// The distribution `p(theta)` that per-image parameters are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    pub kernel_size_choices: Vec<usize>,
    pub apply_prob_choices: Vec<f64>,
    pub gaussian_sigma_range: [f64; 2],
    pub poisson_peak_range: [f64; 2],
    pub motion_angle_range: [f64; 2],
    pub jpeg_quality: u32,
    pub scale: usize,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            kernel_size_choices: vec![1, 3, 5, 7, 9, 11],
            apply_prob_choices: (1..=10).map(|i| i as f64 / 10.0).collect(),
            gaussian_sigma_range: [0.2, 3.0],
            poisson_peak_range: [30.0, 300.0],
            motion_angle_range: [0.0, PI],
            jpeg_quality: 30,
            scale: 4,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(!self.kernel_size_choices.is_empty(), "kernel_size_choices is empty");
        ensure_arg!(
            self.kernel_size_choices.iter().all(|&k| k % 2 == 1),
            "kernel sizes must be odd and >= 1: {:?}",
            self.kernel_size_choices
        );
        ensure_arg!(!self.apply_prob_choices.is_empty(), "apply_prob_choices is empty");
        ensure_arg!(
            self.apply_prob_choices.iter().all(|&p| p > 0.0 && p <= 1.0),
            "apply probabilities must lie in (0, 1]: {:?}",
            self.apply_prob_choices
        );
        for (name, [lo, hi]) in [
            ("gaussian_sigma_range", self.gaussian_sigma_range),
            ("poisson_peak_range", self.poisson_peak_range),
        ] {
            ensure_arg!(lo > 0.0 && lo <= hi && hi.is_finite(), "{name} must be positive and ordered");
        }
        let [a0, a1] = self.motion_angle_range;
        ensure_arg!(a0.is_finite() && a1.is_finite() && a0 <= a1, "motion_angle_range must be ordered");
        ensure_arg!((1..=100).contains(&self.jpeg_quality), "jpeg_quality must be in 1..=100");
        ensure_arg!(self.scale == 2 || self.scale == 4, "scale must be 2 or 4, got {}", self.scale);
        Ok(())
    }

    /// Mean of `apply_prob_choices`, the marginal apply rate of every stage.
    pub fn mean_apply_prob(&self) -> f64 {
        self.apply_prob_choices.iter().sum::<f64>() / self.apply_prob_choices.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub apply: bool,
    pub size: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonParams {
    pub apply: bool,
    pub peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub apply: bool,
    pub length: usize,
    pub angle: f64,
}

/// One realization of `theta`; replays to the same output bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub gaussian: GaussianParams,
    pub poisson: PoissonParams,
    pub motion: MotionParams,
    pub jpeg_quality: u32,
    pub scale: usize,
    pub seed: u64,
}

impl DegradationParams {
    /// Parameters with every noise stage disabled.
    pub fn clean(jpeg_quality: u32, scale: usize, seed: u64) -> Self {
        DegradationParams {
            gaussian: GaussianParams {
                apply: false,
                size: 1,
                sigma: 1.0,
            },
            poisson: PoissonParams {
                apply: false,
                peak: 100.0,
            },
            motion: MotionParams {
                apply: false,
                length: 1,
                angle: 0.0,
            },
            jpeg_quality,
            scale,
            seed,
        }
    }
}

/// Draws parameters from `cfg` using stream [`rng::STREAM_PARAMS`] of `seed`.
///
/// Draw order (fixed): gaussian {probability, gate, size, sigma}, motion
/// {probability, gate, length, angle}, poisson {probability, gate, peak}.
/// All draws happen regardless of the gates so the stream layout never changes.
pub fn sample_params(cfg: &DegradationConfig, seed: u64) -> Result<DegradationParams> {
    cfg.validate()?;
    let mut r = rng::stream(seed, rng::STREAM_PARAMS);
    let gate = |r: &mut rng::ChaCha8Rng| {
        let p = cfg.apply_prob_choices[rng::index(r, cfg.apply_prob_choices.len())];
        rng::unit_f64(r) < p
    };
    let size_of = |r: &mut rng::ChaCha8Rng| cfg.kernel_size_choices[rng::index(r, cfg.kernel_size_choices.len())];

    let g_apply = gate(&mut r);
    let g_size = size_of(&mut r);
    let [s0, s1] = cfg.gaussian_sigma_range;
    let sigma = rng::uniform(&mut r, s0, s1);

    let m_apply = gate(&mut r);
    let m_len = size_of(&mut r);
    let [a0, a1] = cfg.motion_angle_range;
    let angle = rng::uniform(&mut r, a0, a1);

    let p_apply = gate(&mut r);
    let [p0, p1] = cfg.poisson_peak_range;
    let peak = rng::uniform(&mut r, p0, p1);

    Ok(DegradationParams {
        gaussian: GaussianParams {
            apply: g_apply,
            size: g_size,
            sigma,
        },
        poisson: PoissonParams {
            apply: p_apply,
            peak,
        },
        motion: MotionParams {
            apply: m_apply,
            length: m_len,
            angle,
        },
        jpeg_quality: cfg.jpeg_quality,
        scale: cfg.scale,
        seed,
    })
}

/// `L_N`: Gaussian blur, then motion blur, then Poisson noise; disabled stages are skipped.
pub fn apply_noise_stack(img: &Image, p: &DegradationParams, rng: &mut impl RngCore) -> Result<Image> {
    let mut out = img.clone();
    if p.gaussian.apply {
        out = convolve(&out, &gaussian_kernel(p.gaussian.size, p.gaussian.sigma)?);
    }
    if p.motion.apply {
        out = convolve(&out, &motion_kernel(p.motion.length, p.motion.angle)?);
    }
    if p.poisson.apply {
        out = poisson_noise(&out, p.poisson.peak, rng)?;
    }
    Ok(out)
}

/// A degraded training pair with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradedPair {
    /// Noisy LR image `y`.
    pub y: Image,
    /// Clean LR image `y'` (downsampling only).
    pub y_clean: Image,
    pub params: DegradationParams,
}

/// Samples parameters for `seed` and degrades `x`.
pub fn degrade_pair(x: &Image, cfg: &DegradationConfig, seed: u64) -> Result<DegradedPair> {
    let params = sample_params(cfg, seed)?;
    let (y, y_clean) = degrade_with_params(x, &params)?;
    Ok(DegradedPair { y, y_clean, params })
}

/// Replays stored parameters; returns `(y, y')`.
pub fn degrade_with_params(x: &Image, p: &DegradationParams) -> Result<(Image, Image)> {
    ensure_arg!(p.scale >= 1, "scale must be >= 1");
    ensure_arg!(
        x.width() % p.scale == 0 && x.height() % p.scale == 0,
        "image {}x{} not divisible by scale {}",
        x.width(),
        x.height(),
        p.scale
    );
    let (lw, lh) = (x.width() / p.scale, x.height() / p.scale);
    let mut noise_rng = rng::stream(p.seed, rng::STREAM_NOISE);
    let noisy = apply_noise_stack(x, p, &mut noise_rng)?;
    let y = compress_sim(&bicubic_resize(&noisy, lw, lh)?, p.jpeg_quality)?;
    let y_clean = bicubic_resize(x, lw, lh)?;
    Ok((y, y_clean))
}
