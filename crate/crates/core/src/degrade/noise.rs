use rand::RngCore;
use rand_distr::{Distribution, Poisson};

use crate::error::{ensure_arg, Result};
use crate::image::Image;

/// Shot noise: each sample `s` becomes `Poisson(s * peak) / peak`, clamped to [0, 1].
pub fn poisson_noise(img: &Image, peak: f64, rng: &mut impl RngCore) -> Result<Image> {
    ensure_arg!(peak > 0.0 && peak.is_finite(), "peak must be > 0, got {peak}");
    Ok(img.map_planes(|plane| {
        plane
            .iter()
            .map(|&s| {
                let lambda = s * peak;
                if lambda <= 0.0 {
                    return 0.0;
                }
                let draw: f64 = Poisson::new(lambda).expect("positive finite rate").sample(rng);
                draw / peak
            })
            .collect()
    }))
}
