//! im2col + GEMM convolution kernels.

use super::Scalar;

/// Geometry of one conv2d application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// A 1x1 stride-1 unpadded conv reads its input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    for n in 0..g.n {
        let xi = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let oi = &mut out[n * g.cout * plane..(n + 1) * g.cout * plane];
        if let Some(b) = b {
            for (co, chunk) in oi.chunks_exact_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[co]);
            }
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            xi
        } else {
            im2col(g, xi, &mut cols);
            &cols
        };
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.cout,
            patch,
            plane,
            T::one(),
            w,
            (patch as isize, 1),
            cols_ref,
            (plane as isize, 1),
            beta,
            oi,
            (plane as isize, 1),
        );
    }
    out
}

/// Gradients of a conv2d w.r.t. its input (when `dx` is given), weights and bias.
pub(crate) fn backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    mut dx: Option<&mut [T]>,
    dw: &mut [T],
    db: Option<&mut [T]>,
) {
    let (patch, plane) = (g.patch(), g.out_plane());
    let mut cols = vec![T::zero(); patch * plane];
    let mut dcols = vec![T::zero(); patch * plane];
    for n in 0..g.n {
        let xi = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let gi = &dout[n * g.cout * plane..(n + 1) * g.cout * plane];
        let cols_ref: &[T] = if g.is_pointwise() {
            xi
        } else {
            im2col(g, xi, &mut cols);
            &cols
        };
        // dW += dOut * cols^T
        T::gemm(
            g.cout,
            plane,
            patch,
            T::one(),
            gi,
            (plane as isize, 1),
            cols_ref,
            (1, plane as isize),
            T::one(),
            dw,
            (patch as isize, 1),
        );
        if let Some(dx) = dx.as_deref_mut() {
            let dxi = &mut dx[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
            if g.is_pointwise() {
                // dx += W^T * dOut directly
                T::gemm(
                    patch,
                    g.cout,
                    plane,
                    T::one(),
                    w,
                    (1, patch as isize),
                    gi,
                    (plane as isize, 1),
                    T::one(),
                    dxi,
                    (plane as isize, 1),
                );
            } else {
                T::gemm(
                    patch,
                    g.cout,
                    plane,
                    T::one(),
                    w,
                    (1, patch as isize),
                    gi,
                    (plane as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (plane as isize, 1),
                );
                col2im(g, &dcols, dxi);
            }
        }
    }
    if let Some(db) = db {
        for n in 0..g.n {
            let gi = &dout[n * g.cout * plane..(n + 1) * g.cout * plane];
            for (co, chunk) in gi.chunks_exact(plane).enumerate() {
                db[co] = chunk.iter().fold(db[co], |acc, &v| acc + v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.cout * g.oh * g.ow];
        for n in 0..g.n {
            for co in 0..g.cout {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = b[co];
                        for ci in 0..g.cin {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                        acc += w[((co * g.cin + ci) * g.k + ky) * g.k + kx]
                                            * x[((n * g.cin + ci) * g.h + iy as usize) * g.w + ix as usize];
                                    }
                                }
                            }
                        }
                        out[((n * g.cout + co) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        for (k, stride, pad, h, w) in [(3, 1, 1, 5, 6), (3, 2, 1, 7, 8), (1, 1, 0, 4, 3), (5, 1, 2, 6, 6)] {
            let g = ConvGeom {
                n: 2,
                cin: 3,
                cout: 2,
                k,
                stride,
                pad,
                h,
                w,
                oh: (h + 2 * pad - k) / stride + 1,
                ow: (w + 2 * pad - k) / stride + 1,
            };
            let x: Vec<f64> = (0..g.n * g.cin * h * w).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
            let wt: Vec<f64> = (0..g.cout * g.patch()).map(|i| ((i * 5) % 11) as f64 * 0.1 - 0.5).collect();
            let b = vec![0.25, -0.5];
            let got = forward(&g, &x, &wt, Some(&b));
            let want = naive(&g, &x, &wt, &b);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
