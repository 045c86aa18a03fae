//! Full-reference quality metrics: PSNR and single-scale SSIM.
//!
//! Both metrics operate on luma by default (grayscale passes through
//! unchanged); [`ColorSpace::Rgb`] averages over the raw channels instead.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};
use crate::image::{to_luma, Image};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_C1: f64 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
pub const SSIM_C2: f64 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    #[default]
    Luma,
    Rgb,
}

fn prepare(a: &Image, b: &Image, crop: usize, space: ColorSpace) -> Result<(Image, Image)> {
    ensure_arg!(
        a.width() == b.width() && a.height() == b.height() && a.channels() == b.channels(),
        "dimension mismatch: {}x{}x{} vs {}x{}x{}",
        a.width(),
        a.height(),
        a.channels(),
        b.width(),
        b.height(),
        b.channels()
    );
    ensure_arg!(
        2 * crop < a.width().min(a.height()),
        "crop_border {crop} too large for {}x{}",
        a.width(),
        a.height()
    );
    let (a, b) = match space {
        ColorSpace::Luma => (to_luma(a), to_luma(b)),
        ColorSpace::Rgb => (a.clone(), b.clone()),
    };
    let (w, h) = (a.width() - 2 * crop, a.height() - 2 * crop);
    Ok((a.crop(crop, crop, w, h)?, b.crop(crop, crop, w, h)?))
}

/// PSNR in dB on the luma channel with unit peak; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image, crop_border: usize) -> Result<f64> {
    psnr_in(a, b, crop_border, ColorSpace::Luma)
}

pub fn psnr_in(a: &Image, b: &Image, crop_border: usize, space: ColorSpace) -> Result<f64> {
    let (a, b) = prepare(a, b, crop_border, space)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Normalized 1-D Gaussian window; the 2-D window is its outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-region separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, win: &[f64]) -> Vec<f64> {
    let n = win.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = win.iter().zip(&row[x..x + n]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| win[k] * tmp[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM between two planes.
fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let win = gaussian_window();
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, w, h, &win);
    let mu_b = filter_valid(b, w, h, &win);
    let e_aa = filter_valid(&prod(|x, _| x * x), w, h, &win);
    let e_bb = filter_valid(&prod(|_, y| y * y), w, h, &win);
    let e_ab = filter_valid(&prod(|x, y| x * y), w, h, &win);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / n as f64
}

/// Single-scale SSIM on luma (11x11 Gaussian window, sigma 1.5, valid region).
pub fn ssim(a: &Image, b: &Image, crop_border: usize) -> Result<f64> {
    ssim_in(a, b, crop_border, ColorSpace::Luma)
}

pub fn ssim_in(a: &Image, b: &Image, crop_border: usize, space: ColorSpace) -> Result<f64> {
    let (a, b) = prepare(a, b, crop_border, space)?;
    ensure_arg!(
        a.width() >= SSIM_WINDOW && a.height() >= SSIM_WINDOW,
        "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels after cropping, got {}x{}",
        a.width(),
        a.height()
    );
    if a == b {
        return Ok(1.0);
    }
    let (w, h) = (a.width(), a.height());
    let sum: f64 = (0..a.channels()).map(|c| ssim_plane(a.plane(c), b.plane(c), w, h)).sum();
    Ok(sum / a.channels() as f64)
}

/// `+inf` is written as the string `"inf"` since JSON has no infinities.
mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR value {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    #[serde(with = "inf_as_string")]
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageScore>,
    /// Mean over finite PSNR values; `+inf` when every pair is identical.
    #[serde(with = "inf_as_string")]
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    /// Pairs with infinite PSNR (excluded from `mean_psnr_db`).
    pub infinite_psnr_count: usize,
    pub crop_border: usize,
    #[serde(default)]
    pub space: ColorSpace,
}

impl MetricsReport {
    pub fn from_scores(per_image: Vec<ImageScore>, crop_border: usize, space: ColorSpace) -> Result<Self> {
        ensure_arg!(!per_image.is_empty(), "cannot summarize an empty set");
        let finite: Vec<f64> = per_image.iter().map(|s| s.psnr_db).filter(|p| p.is_finite()).collect();
        let mean_psnr_db = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let mean_ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / per_image.len() as f64;
        Ok(MetricsReport {
            infinite_psnr_count: per_image.len() - finite.len(),
            per_image,
            mean_psnr_db,
            mean_ssim,
            crop_border,
            space,
        })
    }
}

/// Scores `(id, restored, reference)` triples.
pub fn evaluate_set(pairs: &[(&str, &Image, &Image)], crop_border: usize) -> Result<MetricsReport> {
    evaluate_set_in(pairs, crop_border, ColorSpace::Luma)
}

pub fn evaluate_set_in(
    pairs: &[(&str, &Image, &Image)],
    crop_border: usize,
    space: ColorSpace,
) -> Result<MetricsReport> {
    ensure_arg!(!pairs.is_empty(), "evaluate_set needs at least one pair");
    let scores = pairs
        .iter()
        .map(|(id, restored, reference)| {
            Ok(ImageScore {
                id: id.to_string(),
                psnr_db: psnr_in(restored, reference, crop_border, space)?,
                ssim: ssim_in(restored, reference, crop_border, space)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_scores(scores, crop_border, space)
}

/// One cell group of a results table.
#[derive(Debug, Clone)]
pub struct TableEntry<'a> {
    pub method: &'a str,
    pub dataset: &'a str,
    pub scale: usize,
    pub report: &'a MetricsReport,
}

/// Aligned text table: rows are `scale x dataset x {PSNR, SSIM}`, columns are methods.
pub fn format_table(entries: &[TableEntry<'_>]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for e in entries {
        if !methods.contains(&e.method) {
            methods.push(e.method);
        }
    }
    let rows: BTreeSet<(std::cmp::Reverse<usize>, &str)> =
        entries.iter().map(|e| (std::cmp::Reverse(e.scale), e.dataset)).collect();
    let col = methods.iter().map(|m| m.len()).max().unwrap_or(0).max(8);
    let label = entries.iter().map(|e| e.dataset.len()).max().unwrap_or(0).max(7) + 12;

    let mut out = String::new();
    let _ = write!(out, "{:label$}", "");
    for m in &methods {
        let _ = write!(out, " | {m:>col$}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(label + methods.len() * (col + 3)));
    out.push('\n');
    for (std::cmp::Reverse(scale), dataset) in rows {
        for metric in ["PSNR", "SSIM"] {
            let _ = write!(out, "{:label$}", format!("x{scale} {dataset} {metric}"));
            for m in &methods {
                let cell = entries
                    .iter()
                    .find(|e| e.method == *m && e.dataset == dataset && e.scale == scale)
                    .map(|e| match metric {
                        "PSNR" if e.report.mean_psnr_db.is_infinite() => "inf".to_string(),
                        "PSNR" => format!("{:.2}", e.report.mean_psnr_db),
                        _ => format!("{:.4}", e.report.mean_ssim),
                    })
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, " | {cell:>col$}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn noise_image(w: usize, h: usize, seed: u64) -> Image {
        let mut r = rng::stream(seed, 0);
        Image::from_fn(w, h, |_, _| rng::unit_f64(&mut r)).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(16, 16, 1, 0.5).unwrap();
        assert_eq!(psnr(&a, &a, 0).unwrap(), f64::INFINITY);
        let b = Image::filled(16, 16, 1, 0.5 + 1.0 / 255.0).unwrap();
        assert!((psnr(&a, &b, 0).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-6);
        assert!((psnr(&a, &b, 0).unwrap() - 48.1308).abs() < 1e-4);
        let c = Image::filled(16, 16, 1, 0.4).unwrap();
        assert!((psnr(&a, &c, 2).unwrap() - 20.0).abs() < 1e-6);
    }

    #[test]
    fn mismatched_or_overcropped_inputs_rejected() {
        let a = Image::filled(16, 16, 1, 0.5).unwrap();
        let b = Image::filled(16, 15, 1, 0.5).unwrap();
        assert!(psnr(&a, &b, 0).is_err());
        assert!(psnr(&a, &a, 8).is_err());
        assert!(ssim(&a, &a, 3).is_err(), "10x10 after crop is too small");
    }

    #[test]
    fn ssim_identity_and_zero_variance_closed_form() {
        let a = noise_image(20, 20, 1);
        assert_eq!(ssim(&a, &a, 0).unwrap(), 1.0);
        let (c, d) = (0.3, 0.2);
        let x = Image::filled(16, 16, 1, c).unwrap();
        let y = Image::filled(16, 16, 1, c + d).unwrap();
        let want = (2.0 * c * (c + d) + SSIM_C1) / (c * c + (c + d) * (c + d) + SSIM_C1);
        assert!((ssim(&x, &y, 0).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_anticorrelated_checkerboard_is_negative() {
        let a = Image::from_fn(16, 16, |x, y| if (x + y) % 2 == 0 { 0.8 } else { 0.2 }).unwrap();
        let b = Image::from_fn(16, 16, |x, y| 1.0 - a.get(x, y, 0)).unwrap();
        assert!(ssim(&a, &b, 0).unwrap() < 0.0);
    }

    #[test]
    fn ssim_is_symmetric_and_translation_invariant() {
        let a = noise_image(30, 30, 2);
        let b = noise_image(30, 30, 3);
        assert!((ssim(&a, &b, 0).unwrap() - ssim(&b, &a, 0).unwrap()).abs() < 1e-12);
        let shifted = |img: &Image| img.crop(3, 2, 24, 24).unwrap();
        let base = |img: &Image| img.crop(0, 0, 24, 24).unwrap();
        // same content translated by (3,2) in both images
        let a2 = Image::from_fn(30, 30, |x, y| a.get((x + 3) % 30, (y + 2) % 30, 0)).unwrap();
        let b2 = Image::from_fn(30, 30, |x, y| b.get((x + 3) % 30, (y + 2) % 30, 0)).unwrap();
        let s1 = ssim(&shifted(&a), &shifted(&b), 0).unwrap();
        let s2 = ssim(&base(&a2), &base(&b2), 0).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn psnr_monotone_in_uniform_noise() {
        let a = Image::filled(16, 16, 1, 0.5).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let b = Image::filled(16, 16, 1, 0.5 + k as f64 * 0.02).unwrap();
            let p = psnr(&a, &b, 0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn rgb_space_uses_channels() {
        let a = Image::filled(12, 12, 3, 0.5).unwrap();
        let b = Image::new(12, 12, 3, [vec![0.6; 144], vec![0.5; 288]].concat()).unwrap();
        let rgb = psnr_in(&a, &b, 0, ColorSpace::Rgb).unwrap();
        assert!((rgb - psnr_from_mse(0.01 / 3.0)).abs() < 1e-9);
        let luma = psnr(&a, &b, 0).unwrap();
        assert!((luma - rgb).abs() > 0.1);
    }

    #[test]
    fn report_means_and_json() {
        let a = Image::filled(16, 16, 1, 0.5).unwrap();
        let b = Image::filled(16, 16, 1, 0.6).unwrap(); // 20 dB
        let c = Image::filled(16, 16, 1, 0.5 + 0.1f64.powf(1.5)).unwrap(); // 30 dB
        let report = evaluate_set(&[("a", &a, &a), ("b", &a, &b), ("c", &a, &c)], 0).unwrap();
        assert_eq!(report.infinite_psnr_count, 1);
        assert!((report.mean_psnr_db - 25.0).abs() < 1e-9);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"inf\""));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);

        let single = evaluate_set(&[("a", &a, &a)], 0).unwrap();
        assert_eq!(single.mean_ssim, 1.0);
        assert!(single.mean_psnr_db.is_infinite());
        assert!(evaluate_set(&[], 0).is_err());
    }

    #[test]
    fn table_layout() {
        let a = Image::filled(16, 16, 1, 0.5).unwrap();
        let b = Image::filled(16, 16, 1, 0.6).unwrap();
        let r = evaluate_set(&[("x", &a, &b)], 0).unwrap();
        let t = format_table(&[
            TableEntry {
                method: "Ours",
                dataset: "mini",
                scale: 4,
                report: &r,
            },
            TableEntry {
                method: "Bic",
                dataset: "mini",
                scale: 4,
                report: &r,
            },
        ]);
        assert!(t.contains("x4 mini PSNR"));
        assert!(t.contains("20.00"));
        assert!(t.lines().next().unwrap().contains("Ours"));
    }
}
