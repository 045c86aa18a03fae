//! SSIM with a uniform 11x11 window, value and gradient.
//!
//! Per window `p` the local statistics are box means over the window. With
//! `N1 = 2 mu_a mu_b + C1`, `N2 = 2 cov + C2`, `D1 = mu_a^2 + mu_b^2 + C1`
//! and `D2 = var_a + var_b + C2`, `S_p = N1 N2 / (D1 D2)`. Differentiating
//! through the window statistics gives, for a pixel `q` of `a`,
//!
//! ```text
//! dS_p/da_q = (A_p + B_p a_q + C_p b_q) / n^2      (q inside window p)
//! A = dS/dmu_a - 2 mu_a dS/dvar_a - mu_b dS/dcov
//! B = 2 dS/dvar_a,   C = dS/dcov
//! ```
//!
//! so the full gradient is a "full"-mode box sum of the `A`, `B`, `C` maps.

use crate::metrics::{SSIM_C1, SSIM_C2, SSIM_WINDOW};

const N: usize = SSIM_WINDOW;

/// Valid-mode box sums along one axis of a row-major `rows x len` array.
fn box_rows(src: &[f64], rows: usize, len: usize) -> Vec<f64> {
    let out_len = len - N + 1;
    let mut out = vec![0.0; rows * out_len];
    for r in 0..rows {
        let row = &src[r * len..(r + 1) * len];
        let mut acc: f64 = row[..N].iter().sum();
        out[r * out_len] = acc;
        for j in 1..out_len {
            acc += row[j + N - 1] - row[j - 1];
            out[r * out_len + j] = acc;
        }
    }
    out
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Window means over every valid position, shape `(h-N+1) x (w-N+1)`.
fn box_mean(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h - N + 1, w - N + 1);
    let horiz = box_rows(src, h, w); // h x ow
    let vert = box_rows(&transpose(&horiz, h, ow), ow, h); // ow x oh
    let inv = 1.0 / (N * N) as f64;
    transpose(&vert, ow, oh).into_iter().map(|v| v * inv).collect()
}

/// Full-mode box sum along rows: out[j] = sum of src[p] for p in [j-N+1, j].
fn full_rows(src: &[f64], rows: usize, len: usize) -> Vec<f64> {
    let out_len = len + N - 1;
    let mut out = vec![0.0; rows * out_len];
    for r in 0..rows {
        let row = &src[r * len..(r + 1) * len];
        let mut acc = 0.0;
        for j in 0..out_len {
            if j < len {
                acc += row[j];
            }
            if j >= N {
                acc -= row[j - N];
            }
            out[r * out_len + j] = acc;
        }
    }
    out
}

/// Adjoint of an (unnormalized) valid box sum: `oh x ow` -> `h x w`.
fn box_adjoint(src: &[f64], oh: usize, ow: usize) -> Vec<f64> {
    let (h, w) = (oh + N - 1, ow + N - 1);
    let horiz = full_rows(src, oh, ow); // oh x w
    let vert = full_rows(&transpose(&horiz, oh, w), w, oh); // w x h
    transpose(&vert, w, h)
}

struct Stats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn stats(a: &[f64], b: &[f64], h: usize, w: usize) -> Stats {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = box_mean(a, h, w);
    let mu_b = box_mean(b, h, w);
    let e_aa = box_mean(&sq(a, a), h, w);
    let e_bb = box_mean(&sq(b, b), h, w);
    let e_ab = box_mean(&sq(a, b), h, w);
    let var_a = e_aa.iter().zip(&mu_a).map(|(e, m)| e - m * m).collect();
    let var_b = e_bb.iter().zip(&mu_b).map(|(e, m)| e - m * m).collect();
    let cov = e_ab.iter().zip(mu_a.iter().zip(&mu_b)).map(|(e, (x, y))| e - x * y).collect();
    Stats {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
    }
}

/// Sum of per-window SSIM over one plane and the number of windows.
pub(crate) fn plane_sum(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, usize) {
    let s = stats(a, b, h, w);
    let mut total = 0.0;
    for i in 0..s.mu_a.len() {
        let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
        let n1 = 2.0 * ma * mb + SSIM_C1;
        let n2 = 2.0 * s.cov[i] + SSIM_C2;
        let d1 = ma * ma + mb * mb + SSIM_C1;
        let d2 = s.var_a[i] + s.var_b[i] + SSIM_C2;
        total += n1 * n2 / (d1 * d2);
    }
    (total, s.mu_a.len())
}

/// Adds `scale * d(sum_p S_p)/da` and `.../db` for one plane into `ga`, `gb`.
pub(crate) fn plane_grad(
    a: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    scale: f64,
    ga: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let s = stats(a, b, h, w);
    let (oh, ow) = (h - N + 1, w - N + 1);
    let m = oh * ow;
    let mut coef_a = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let mut coef_b = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for i in 0..m {
        let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
        let n1 = 2.0 * ma * mb + SSIM_C1;
        let n2 = 2.0 * s.cov[i] + SSIM_C2;
        let d1 = ma * ma + mb * mb + SSIM_C1;
        let d2 = s.var_a[i] + s.var_b[i] + SSIM_C2;
        let d = d1 * d2;
        let ssim = n1 * n2 / d;
        let ds_dcov = 2.0 * n1 / d;
        let ds_dvar = -ssim / d2;
        let ds_dmu_a = 2.0 * mb * n2 / d - 2.0 * ma * ssim / d1;
        let ds_dmu_b = 2.0 * ma * n2 / d - 2.0 * mb * ssim / d1;
        coef_a[0][i] = ds_dmu_a - 2.0 * ma * ds_dvar - mb * ds_dcov;
        coef_a[1][i] = 2.0 * ds_dvar;
        coef_a[2][i] = ds_dcov;
        coef_b[0][i] = ds_dmu_b - 2.0 * mb * ds_dvar - ma * ds_dcov;
        coef_b[1][i] = 2.0 * ds_dvar;
        coef_b[2][i] = ds_dcov;
    }
    let k = scale / (N * N) as f64;
    let apply = |coef: &[Vec<f64>; 3], own: &[f64], other: &[f64], out: &mut [f64]| {
        let [fa, fb, fc] = [&coef[0], &coef[1], &coef[2]].map(|c| box_adjoint(c, oh, ow));
        for q in 0..h * w {
            out[q] += k * (fa[q] + own[q] * fb[q] + other[q] * fc[q]);
        }
    };
    if let Some(ga) = ga {
        apply(&coef_a, a, b, ga);
    }
    if let Some(gb) = gb {
        apply(&coef_b, b, a, gb);
    }
}
