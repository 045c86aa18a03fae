//! DCT quantization artifacts without an actual JPEG bitstream.

use std::sync::OnceLock;

use crate::error::{ensure_arg, Result};
use crate::image::Image;

/// Annex K luminance quantization table (row-major, natural order).
pub const LUMA_QUANT_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Luminance table scaled with the libjpeg quality rule.
pub fn quant_table(quality: u32) -> Result<[u16; 64]> {
    ensure_arg!((1..=100).contains(&quality), "quality must be in 1..=100, got {quality}");
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut table = [0u16; 64];
    for (t, &base) in table.iter_mut().zip(&LUMA_QUANT_TABLE) {
        *t = ((base as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(table)
}

/// Orthonormal 8-point DCT-II basis, `m[u][x]`.
fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

fn dct2(block: &[f64; 64]) -> [f64; 64] {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| m[u][y] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|x| tmp[u * 8 + x] * m[v][x]).sum();
        }
    }
    out
}

fn idct2(coef: &[f64; 64]) -> [f64; 64] {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| m[u][y] * coef[u * 8 + v]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| tmp[y * 8 + v] * m[v][x]).sum();
        }
    }
    out
}

/// Visits every 8x8 block of an edge-replicated plane.
fn for_each_block(plane: &[f64], w: usize, h: usize, mut f: impl FnMut(usize, usize, &[f64; 64])) {
    let bw = w.div_ceil(8);
    let bh = h.div_ceil(8);
    for by in 0..bh {
        for bx in 0..bw {
            let mut block = [0.0; 64];
            for y in 0..8 {
                let sy = (by * 8 + y).min(h - 1);
                for x in 0..8 {
                    let sx = (bx * 8 + x).min(w - 1);
                    block[y * 8 + x] = plane[sy * w + sx] - 0.5;
                }
            }
            f(bx, by, &block);
        }
    }
}

fn quantize(coef: &[f64; 64], table: &[u16; 64]) -> [i32; 64] {
    let mut q = [0i32; 64];
    for i in 0..64 {
        q[i] = (coef[i] * 255.0 / table[i] as f64).round() as i32;
    }
    q
}

/// Quantized DCT levels of every 8x8 block of a single plane (row-major block order).
pub fn quantized_blocks(plane: &[f64], w: usize, h: usize, quality: u32) -> Result<Vec<[i32; 64]>> {
    ensure_arg!(plane.len() == w * h && w > 0 && h > 0, "plane size mismatch");
    let table = quant_table(quality)?;
    let mut out = Vec::new();
    for_each_block(plane, w, h, |_, _, block| out.push(quantize(&dct2(block), &table)));
    Ok(out)
}

/// Simulates JPEG-style compression of every plane at the given quality.
pub fn compress_sim(img: &Image, quality: u32) -> Result<Image> {
    let table = quant_table(quality)?;
    let (w, h) = (img.width(), img.height());
    Ok(img.map_planes(|plane| {
        let mut out = vec![0.0; w * h];
        for_each_block(plane, w, h, |bx, by, block| {
            let levels = quantize(&dct2(block), &table);
            let mut coef = [0.0; 64];
            for i in 0..64 {
                coef[i] = levels[i] as f64 * table[i] as f64 / 255.0;
            }
            let recon = idct2(&coef);
            for y in 0..8 {
                let oy = by * 8 + y;
                if oy >= h {
                    break;
                }
                for x in 0..8 {
                    let ox = bx * 8 + x;
                    if ox >= w {
                        break;
                    }
                    out[oy * w + ox] = recon[y * 8 + x] + 0.5;
                }
            }
        });
        out
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut r = rng::stream(seed, 0);
        Image::from_fn(w, h, |_, _| rng::unit_f64(&mut r)).unwrap()
    }

    #[test]
    fn quality_scaling_rule() {
        assert!(quant_table(100).unwrap().iter().all(|&q| q == 1));
        assert_eq!(quant_table(50).unwrap(), LUMA_QUANT_TABLE);
        // q=3 -> scale 1666: 16*1666/100 rounds past 255
        assert_eq!(quant_table(3).unwrap()[0], 255);
        assert_eq!(quant_table(30).unwrap()[0], ((16 * 166 + 50) / 100) as u16);
        assert!(quant_table(0).is_err());
        assert!(quant_table(101).is_err());
    }

    #[test]
    fn dct_roundtrip() {
        let mut block = [0.0; 64];
        for (i, v) in block.iter_mut().enumerate() {
            *v = ((i * 29) % 17) as f64 / 17.0 - 0.5;
        }
        let back = idct2(&dct2(&block));
        for (a, b) in block.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_blocks_within_dc_bound() {
        for quality in [1, 3, 10, 30, 50, 75, 100] {
            let q00 = quant_table(quality).unwrap()[0] as f64;
            for k in 0..=20 {
                let c = k as f64 / 20.0;
                let img = Image::filled(13, 9, 1, c).unwrap();
                let out = compress_sim(&img, quality).unwrap();
                let first = out.data()[0];
                assert!(out.data().iter().all(|&v| (v - first).abs() < 1e-12), "not constant");
                assert!((first - c).abs() <= q00 / 16.0 / 255.0 + 1e-12, "q={quality} c={c}");
            }
        }
    }

    #[test]
    fn quality_100_error_bound() {
        let img = random_image(24, 16, 5);
        let out = compress_sim(&img, 100).unwrap();
        let max_q = *quant_table(100).unwrap().iter().max().unwrap() as f64;
        // 64 coefficients, each off by at most half a step, basis magnitude <= 1/4
        let bound = 64.0 * 0.25 * 0.5 * max_q / 255.0;
        let max_err = img.data().iter().zip(out.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err <= bound);
        assert!(max_err < 2.0 / 255.0, "typical error should be tiny, got {max_err}");
    }

    #[test]
    fn low_quality_keeps_fewer_coefficients() {
        let img = random_image(32, 32, 11);
        let count = |q| {
            quantized_blocks(img.data(), 32, 32, q)
                .unwrap()
                .iter()
                .map(|b| b.iter().filter(|&&v| v != 0).count())
                .sum::<usize>()
        };
        assert!(count(5) < count(95));
    }

    #[test]
    fn non_multiple_of_eight_keeps_size() {
        let img = random_image(11, 5, 2);
        let out = compress_sim(&img, 30).unwrap();
        assert_eq!((out.width(), out.height()), (11, 5));
    }
}
