use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};
use crate::image::Image;

/// A normalized, odd-sized square blur kernel (row-major weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Normalizes `weights` to unit sum. Weights must be nonnegative with a positive sum.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        ensure_arg!(size % 2 == 1, "kernel size must be odd and >= 1, got {size}");
        ensure_arg!(weights.len() == size * size, "kernel needs {} weights", size * size);
        ensure_arg!(
            weights.iter().all(|w| w.is_finite() && *w >= 0.0),
            "kernel weights must be finite and nonnegative"
        );
        let sum: f64 = weights.iter().sum();
        ensure_arg!(sum > 0.0, "kernel weights sum to zero");
        Ok(Kernel {
            size,
            weights: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn identity() -> Self {
        Kernel {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn transpose(&self) -> Kernel {
        let n = self.size;
        let weights = (0..n * n).map(|i| self.weights[(i % n) * n + i / n]).collect();
        Kernel { size: n, weights }
    }
}

fn check_size(size: usize) -> Result<()> {
    ensure_arg!(size % 2 == 1, "kernel size must be odd and >= 1, got {size}");
    Ok(())
}

/// Isotropic Gaussian sampled at integer offsets from the center.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel> {
    check_size(size)?;
    ensure_arg!(sigma > 0.0 && sigma.is_finite(), "sigma must be > 0, got {sigma}");
    let r = (size / 2) as isize;
    let denom = 2.0 * sigma * sigma;
    let mut weights = Vec::with_capacity(size * size);
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dx * dx + dy * dy) as f64) / denom).exp());
        }
    }
    Kernel::new(size, weights)
}

/// Linear motion blur: `length` unit-spaced points along a segment through
/// the center at `angle` (radians, counter-clockwise from +x with rows
/// growing downward), splatted bilinearly onto the grid.
pub fn motion_kernel(length: usize, angle: f64) -> Result<Kernel> {
    check_size(length)?;
    ensure_arg!(angle.is_finite(), "angle must be finite");
    let n = length;
    let r = (n / 2) as f64;
    let (sin, cos) = angle.sin_cos();
    let mut weights = vec![0.0; n * n];
    for k in 0..n {
        let t = k as f64 - r;
        // |t| <= r, so every splat stays inside the grid
        let col = (r + t * cos).clamp(0.0, (n - 1) as f64);
        let row = (r - t * sin).clamp(0.0, (n - 1) as f64);
        let (c0, r0) = (col.floor(), row.floor());
        let (fc, fr) = (col - c0, row - r0);
        let (c0, r0) = (c0 as usize, r0 as usize);
        let c1 = (c0 + 1).min(n - 1);
        let r1 = (r0 + 1).min(n - 1);
        weights[r0 * n + c0] += (1.0 - fr) * (1.0 - fc);
        weights[r0 * n + c1] += (1.0 - fr) * fc;
        weights[r1 * n + c0] += fr * (1.0 - fc);
        weights[r1 * n + c1] += fr * fc;
    }
    Kernel::new(n, weights)
}

/// 2-D correlation with clamp-to-edge padding, applied per plane; output clamped.
pub fn convolve(img: &Image, k: &Kernel) -> Image {
    let (w, h) = (img.width(), img.height());
    let n = k.size();
    let r = (n / 2) as isize;
    img.map_planes(|plane| {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..n {
                    let sy = (y as isize + ky as isize - r).clamp(0, h as isize - 1) as usize;
                    let row = &plane[sy * w..(sy + 1) * w];
                    for kx in 0..n {
                        let sx = (x as isize + kx as isize - r).clamp(0, w as isize - 1) as usize;
                        acc += k.weights[ky * n + kx] * row[sx];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum(k: &Kernel) -> f64 {
        k.weights().iter().sum()
    }

    #[test]
    fn gaussian_closed_form() {
        assert_eq!(gaussian_kernel(1, 2.0).unwrap().weights(), &[1.0]);
        let k = gaussian_kernel(3, 0.5).unwrap();
        let e = std::f64::consts::E;
        let center = 1.0 / (1.0 + 4.0 * e.powi(-2) + 4.0 * e.powi(-4));
        assert!((k.at(1, 1) - center).abs() < 1e-12);
        assert!((center - 0.619_35).abs() < 1e-5);
    }

    #[test]
    fn gaussian_is_fourfold_symmetric() {
        for (size, sigma) in [(3, 0.7), (5, 1.3), (11, 3.0)] {
            let k = gaussian_kernel(size, sigma).unwrap();
            for r in 0..size {
                for c in 0..size {
                    let v = k.at(r, c);
                    assert_eq!(v, k.at(c, r));
                    assert_eq!(v, k.at(size - 1 - r, c));
                    assert_eq!(v, k.at(r, size - 1 - c));
                }
            }
        }
    }

    #[test]
    fn motion_axis_aligned() {
        assert_eq!(motion_kernel(1, 0.7).unwrap().weights(), &[1.0]);
        let k = motion_kernel(3, 0.0).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(k.weights(), &[0.0, 0.0, 0.0, third, third, third, 0.0, 0.0, 0.0]);
        let v = motion_kernel(3, std::f64::consts::FRAC_PI_2).unwrap();
        for (a, b) in v.weights().iter().zip(k.transpose().weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kernels_sum_to_one() {
        for size in [1, 3, 5, 7, 9, 11] {
            for i in 0..8 {
                let g = gaussian_kernel(size, 0.2 + i as f64 * 0.4).unwrap();
                let m = motion_kernel(size, i as f64 * 0.4).unwrap();
                assert!((sum(&g) - 1.0).abs() < 1e-12);
                assert!((sum(&m) - 1.0).abs() < 1e-12);
                assert!(m.weights().iter().all(|&w| w >= 0.0));
            }
        }
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(gaussian_kernel(0, 1.0).is_err());
        assert!(gaussian_kernel(4, 1.0).is_err());
        assert!(gaussian_kernel(3, 0.0).is_err());
        assert!(motion_kernel(2, 0.0).is_err());
    }

    #[test]
    fn convolve_identity_and_constant() {
        let img = Image::from_fn(7, 5, |x, y| ((x * 3 + y * 5) % 11) as f64 / 10.0).unwrap();
        assert_eq!(convolve(&img, &Kernel::identity()), img);
        let c = Image::filled(6, 6, 1, 0.37).unwrap();
        let out = convolve(&c, &gaussian_kernel(5, 1.1).unwrap());
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn convolve_impulse_imprints_kernel() {
        let img = Image::from_fn(7, 7, |x, y| if (x, y) == (3, 3) { 1.0 } else { 0.0 }).unwrap();
        let k = Kernel::new(3, (1..=9).map(f64::from).collect()).unwrap();
        let out = convolve(&img, &k);
        // correlation: out(3+dx, 3+dy) = k(1-dy, 1-dx)
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                let got = out.get((3 + dx) as usize, (3 + dy) as usize, 0);
                let want = k.at((1 - dy) as usize, (1 - dx) as usize);
                assert!((got - want).abs() < 1e-15);
            }
        }
        assert_eq!(out.get(0, 0, 0), 0.0);
    }
}
