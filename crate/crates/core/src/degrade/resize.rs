//! Separable cubic-convolution resampling.
//!
//! [`ResizePlan`] holds the per-output taps for both axes. The same plan is
//! used by [`bicubic_resize`] on images and by the differentiable resize op
//! in [`crate::autodiff`], so both produce identical values.

use num_traits::Float;

use crate::error::{ensure_arg, Result};
use crate::image::Image;

/// Keys' cubic convolution parameter.
pub const CUBIC_A: f64 = -0.5;

pub fn cubic(t: f64) -> f64 {
    let a = CUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Source indices and weights contributing to one output sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Taps {
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

/// 1-D taps mapping `src` samples onto `dst` samples. When shrinking the
/// kernel is stretched by the scale ratio (antialiasing).
pub fn axis_taps(src: usize, dst: usize) -> Vec<Taps> {
    let ratio = src as f64 / dst as f64;
    let stretch = ratio.max(1.0);
    let support = 2.0 * stretch;
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let lo = (center - support).ceil() as isize;
            let hi = (center + support).floor() as isize;
            let mut index = Vec::with_capacity((hi - lo + 1) as usize);
            let mut weight = Vec::with_capacity(index.capacity());
            for j in lo..=hi {
                index.push(j.clamp(0, src as isize - 1) as usize);
                weight.push(cubic((j as f64 - center) / stretch));
            }
            let sum: f64 = weight.iter().sum();
            for w in &mut weight {
                *w /= sum;
            }
            Taps { index, weight }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResizePlan {
    pub src_w: usize,
    pub src_h: usize,
    pub dst_w: usize,
    pub dst_h: usize,
    cols: Vec<Taps>,
    rows: Vec<Taps>,
}

impl ResizePlan {
    pub fn new(src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Result<Self> {
        ensure_arg!(src_w >= 1 && src_h >= 1, "source dims must be >= 1");
        ensure_arg!(dst_w >= 1 && dst_h >= 1, "output dims must be >= 1, got {dst_w}x{dst_h}");
        Ok(ResizePlan {
            src_w,
            src_h,
            dst_w,
            dst_h,
            cols: axis_taps(src_w, dst_w),
            rows: axis_taps(src_h, dst_h),
        })
    }

    /// Resamples one plane: horizontal pass, then vertical pass. No clamping.
    pub fn apply<T: Float>(&self, src: &[T]) -> Vec<T> {
        debug_assert_eq!(src.len(), self.src_w * self.src_h);
        let mut tmp = vec![T::zero(); self.src_h * self.dst_w];
        for y in 0..self.src_h {
            let row = &src[y * self.src_w..(y + 1) * self.src_w];
            for (j, taps) in self.cols.iter().enumerate() {
                let mut acc = T::zero();
                for (&k, &w) in taps.index.iter().zip(&taps.weight) {
                    acc = acc + T::from(w).unwrap() * row[k];
                }
                tmp[y * self.dst_w + j] = acc;
            }
        }
        let mut out = vec![T::zero(); self.dst_h * self.dst_w];
        for (i, taps) in self.rows.iter().enumerate() {
            let dst = &mut out[i * self.dst_w..(i + 1) * self.dst_w];
            for (j, o) in dst.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (&k, &w) in taps.index.iter().zip(&taps.weight) {
                    acc = acc + T::from(w).unwrap() * tmp[k * self.dst_w + j];
                }
                *o = acc;
            }
        }
        out
    }

    /// Adjoint of [`ResizePlan::apply`]: accumulates `grad_out` back onto a
    /// source-shaped plane.
    pub fn apply_adjoint<T: Float>(&self, grad_out: &[T], grad_src: &mut [T]) {
        debug_assert_eq!(grad_out.len(), self.dst_w * self.dst_h);
        let mut tmp = vec![T::zero(); self.src_h * self.dst_w];
        for (i, taps) in self.rows.iter().enumerate() {
            for j in 0..self.dst_w {
                let g = grad_out[i * self.dst_w + j];
                for (&k, &w) in taps.index.iter().zip(&taps.weight) {
                    tmp[k * self.dst_w + j] = tmp[k * self.dst_w + j] + T::from(w).unwrap() * g;
                }
            }
        }
        for y in 0..self.src_h {
            let row = &mut grad_src[y * self.src_w..(y + 1) * self.src_w];
            for (j, taps) in self.cols.iter().enumerate() {
                let g = tmp[y * self.dst_w + j];
                for (&k, &w) in taps.index.iter().zip(&taps.weight) {
                    row[k] = row[k] + T::from(w).unwrap() * g;
                }
            }
        }
    }
}

/// Antialiased bicubic resize of every plane, clamped to `[0, 1]`.
pub fn bicubic_resize(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    let plan = ResizePlan::new(img.width(), img.height(), out_w, out_h)?;
    let mut data = Vec::with_capacity(out_w * out_h * img.channels());
    for c in 0..img.channels() {
        data.extend(plan.apply(img.plane(c)));
    }
    Image::from_clamped(out_w, out_h, img.channels(), data)
}
