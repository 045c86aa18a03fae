//! Paired dataset synthesis, manifests and replay verification, plus the
//! synthetic radiograph-like fixture used by tests and demos.
//!
//! Output layout:
//!
//! ```text
//! out/
//!   manifest.json
//!   HR/<id>.png        HR image actually degraded (8-bit, scale-divisible)
//!   LRnoisy/<id>.png   y  = compress(bicubic_down(L_N(x)))
//!   LRclean/<id>.png   y' = bicubic_down(x)
//! ```

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{degrade_pair, degrade_with_params, DegradationConfig, DegradationParams};
use crate::error::{ensure_arg, Error, Result};
use crate::image::{load_image, quantize_u8, save_image, to_luma, Image};
use crate::rng;
use crate::training::{EvalSet, Sample};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HR_DIR: &str = "HR";
pub const LR_NOISY_DIR: &str = "LRnoisy";
pub const LR_CLEAN_DIR: &str = "LRclean";

/// Named overrides of the degradation distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProfile {
    pub name: String,
    pub kernel_size_choices: Vec<usize>,
    pub jpeg_quality: u32,
    pub scale: usize,
}

impl SplitProfile {
    pub const NAMES: [&'static str; 4] = ["mura-sr", "mini", "plus", "paper-q3"];

    pub fn named(name: &str) -> Result<Self> {
        let all = DegradationConfig::default().kernel_size_choices;
        let (kernels, quality) = match name {
            "mura-sr" => (all, 30),
            "mini" => (vec![1, 3, 5], 30),
            "plus" => (vec![7, 9, 11], 30),
            "paper-q3" => (all, 3),
            other => {
                return Err(Error::Argument(format!(
                    "unknown profile {other:?} (expected one of {:?})",
                    Self::NAMES
                )))
            }
        };
        Ok(SplitProfile {
            name: name.to_string(),
            kernel_size_choices: kernels,
            jpeg_quality: quality,
            scale: 4,
        })
    }

    pub fn apply(&self, cfg: &mut DegradationConfig) {
        cfg.kernel_size_choices = self.kernel_size_choices.clone();
        cfg.jpeg_quality = self.jpeg_quality;
        cfg.scale = self.scale;
    }

    pub fn config(&self) -> DegradationConfig {
        let mut cfg = DegradationConfig::default();
        self.apply(&mut cfg);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub hr_path: String,
    pub lr_noisy_path: String,
    pub lr_clean_path: String,
    pub params: DegradationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: DegradationConfig,
    pub master_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        ensure_arg!(m.version == MANIFEST_VERSION, "unsupported manifest version {}", m.version);
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Snaps every sample to the 8-bit grid, so the value degraded equals the
/// value stored on disk.
pub fn quantize_image(img: &Image) -> Image {
    let data = img.data().iter().map(|&v| quantize_u8(v) as f64 / 255.0).collect();
    Image::new(img.width(), img.height(), img.channels(), data).expect("quantized samples are in range")
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "pgm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Degrades every image of `hr_dir` into `out_dir` and writes the manifest.
///
/// Image `i` (in file-name order) uses seed `substream_seed(master_seed, i)`,
/// so the result does not depend on how the work is scheduled.
pub fn synth_dataset(hr_dir: &Path, out_dir: &Path, cfg: &DegradationConfig, master_seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    let files = image_files(hr_dir)?;
    ensure_arg!(!files.is_empty(), "no PNG/PGM images in {}", hr_dir.display());
    let mut seen = HashSet::new();
    let ids: Vec<String> = files
        .iter()
        .map(|f| f.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    for id in &ids {
        ensure_arg!(seen.insert(id.as_str()), "two input images share the name {id:?}");
    }
    for d in [HR_DIR, LR_NOISY_DIR, LR_CLEAN_DIR] {
        create_dir(&out_dir.join(d))?;
    }
    let entries = files
        .par_iter()
        .zip(&ids)
        .enumerate()
        .map(|(i, (file, id))| {
            let img = to_luma(&load_image(file)?);
            let hr = quantize_image(&img.center_crop_to_multiple(cfg.scale)?);
            let pair = degrade_pair(&hr, cfg, rng::substream_seed(master_seed, i as u64))?;
            let entry = ManifestEntry {
                id: id.clone(),
                hr_path: format!("{HR_DIR}/{id}.png"),
                lr_noisy_path: format!("{LR_NOISY_DIR}/{id}.png"),
                lr_clean_path: format!("{LR_CLEAN_DIR}/{id}.png"),
                params: pair.params,
            };
            save_image(&hr, out_dir.join(&entry.hr_path))?;
            save_image(&pair.y, out_dir.join(&entry.lr_noisy_path))?;
            save_image(&pair.y_clean, out_dir.join(&entry.lr_clean_path))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        master_seed,
        entries,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub id: String,
    pub path: String,
    pub differing_pixels: usize,
    pub max_abs_diff: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub version: u32,
    pub entries_checked: usize,
    pub mismatches: Vec<Mismatch>,
    pub missing: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty() && self.missing.is_empty()
    }
}

fn to_bytes(img: &Image) -> Vec<u8> {
    img.data().iter().map(|&v| quantize_u8(v)).collect()
}

/// Replays every entry from its stored parameters and compares against the
/// LR files on disk at the byte level.
pub fn verify_manifest(manifest_path: &Path) -> Result<VerifyReport> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut report = VerifyReport {
        version: MANIFEST_VERSION,
        entries_checked: 0,
        mismatches: Vec::new(),
        missing: Vec::new(),
    };
    for e in &manifest.entries {
        let paths = [&e.hr_path, &e.lr_noisy_path, &e.lr_clean_path];
        let absent: Vec<String> = paths.iter().filter(|p| !root.join(p).is_file()).map(|p| p.to_string()).collect();
        if !absent.is_empty() {
            report.missing.extend(absent);
            continue;
        }
        let hr = load_image(root.join(&e.hr_path))?;
        let (y, y_clean) = degrade_with_params(&hr, &e.params)?;
        for (path, expected) in [(&e.lr_noisy_path, &y), (&e.lr_clean_path, &y_clean)] {
            let stored = load_image(root.join(path))?;
            let want = to_bytes(expected);
            let got = to_bytes(&stored);
            let same_dims = (stored.width(), stored.height(), stored.channels())
                == (expected.width(), expected.height(), expected.channels());
            let (count, max) = if same_dims {
                got.iter().zip(&want).fold((0, 0u8), |(n, m), (a, b)| {
                    let d = a.abs_diff(*b);
                    (n + (d > 0) as usize, m.max(d))
                })
            } else {
                (want.len().max(got.len()), u8::MAX)
            };
            if count > 0 {
                report.mismatches.push(Mismatch {
                    id: e.id.clone(),
                    path: path.clone(),
                    differing_pixels: count,
                    max_abs_diff: max,
                });
            }
        }
        report.entries_checked += 1;
    }
    Ok(report)
}

/// Loads every manifest entry as a held-out evaluation item.
pub fn load_eval_set(manifest_path: &Path) -> Result<EvalSet> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let items = manifest
        .entries
        .iter()
        .map(|e| {
            Ok((
                e.id.clone(),
                Sample {
                    hr: load_image(root.join(&e.hr_path))?,
                    lr_noisy: load_image(root.join(&e.lr_noisy_path))?,
                    lr_clean: load_image(root.join(&e.lr_clean_path))?,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(EvalSet { items })
}

/// Loads all PNG/PGM images of a directory, sorted by name.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    image_files(dir)?
        .iter()
        .map(|f| {
            let id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, load_image(f)?))
        })
        .collect()
}

pub const FIXTURE_COUNT: usize = 64;
pub const FIXTURE_SIZE: usize = 96;

/// 5x7 bitmaps for a few marker glyphs, one row per byte (low 5 bits).
const GLYPHS: [[u8; 7]; 8] = [
    [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F], // L
    [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11], // R
    [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11], // A
    [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10], // P
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E], // 0
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E], // 1
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F], // 2
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E], // 3
];

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn segment_distance(px: f64, py: f64, (ax, ay): (f64, f64), (bx, by): (f64, f64)) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let t = (((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((px - ax - t * dx).powi(2) + (py - ay - t * dy).powi(2)).sqrt()
}

/// One synthetic radiograph-like image: a smooth exposure gradient, soft
/// tissue texture, bright bone shafts with denser cortices, thin line
/// structures and a few marker glyphs.
pub fn fixture_image(index: usize, seed: u64, size: usize) -> Image {
    let mut r = rng::stream(rng::substream_seed(seed, index as u64), rng::STREAM_PARAMS);
    let s = size as f64;
    let mut u = |lo: f64, hi: f64| rng::uniform(&mut r, lo, hi);

    let base = u(0.08, 0.2);
    let (gx, gy) = (u(-0.12, 0.12), u(-0.12, 0.12));
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| (u(0.01, 0.04), u(0.03, 0.15), u(0.0, PI), u(0.0, 2.0 * PI)))
        .collect();
    let n_bones = 1 + (u(0.0, 2.999) as usize);
    let bones: Vec<((f64, f64), (f64, f64), f64, f64)> = (0..n_bones)
        .map(|_| {
            let a = (u(0.1, 0.9) * s, u(-0.1, 0.3) * s);
            let b = (u(0.1, 0.9) * s, u(0.7, 1.1) * s);
            (a, b, u(0.06, 0.14) * s, u(0.25, 0.4))
        })
        .collect();
    let n_lines = 2 + (u(0.0, 2.999) as usize);
    let lines: Vec<((f64, f64), (f64, f64), f64, f64)> = (0..n_lines)
        .map(|_| {
            let a = (u(0.0, 1.0) * s, u(0.0, 1.0) * s);
            let b = (u(0.0, 1.0) * s, u(0.0, 1.0) * s);
            (a, b, u(0.4, 1.2), u(-0.15, 0.25))
        })
        .collect();
    let n_glyphs = 1 + (u(0.0, 2.999) as usize);
    let gx0 = u(0.05, 0.6) * s;
    let gy0 = u(0.05, 0.8) * s;
    let glyph_scale = if u(0.0, 1.0) < 0.5 { 1 } else { 2 };
    let glyphs: Vec<usize> = (0..n_glyphs).map(|_| u(0.0, GLYPHS.len() as f64 - 1e-9) as usize).collect();

    let mut img = Image::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = base + gx * px / s + gy * py / s;
        for &(amp, freq, theta, phase) in &waves {
            v += amp * ((px * theta.cos() + py * theta.sin()) * freq + phase).sin();
        }
        for &(a, b, radius, density) in &bones {
            let d = segment_distance(px, py, a, b);
            let inside = 1.0 - smoothstep(radius - 1.0, radius + 1.0, d);
            let cortex = (d / radius).clamp(0.0, 1.0).powi(6);
            v += inside * (density + 0.25 * cortex);
        }
        for &(a, b, width, strength) in &lines {
            let d = segment_distance(px, py, a, b);
            v += strength * (1.0 - smoothstep(width * 0.5, width * 0.5 + 1.0, d));
        }
        v.clamp(0.0, 1.0)
    })
    .expect("fixture size is positive");

    let mut data = img.data().to_vec();
    let gw = 6 * glyph_scale;
    for (k, &g) in glyphs.iter().enumerate() {
        let ox = gx0 as usize + k * gw;
        let oy = gy0 as usize;
        for (row, bits) in GLYPHS[g].iter().enumerate() {
            for col in 0..5 {
                if bits >> (4 - col) & 1 == 0 {
                    continue;
                }
                for dy in 0..glyph_scale {
                    for dx in 0..glyph_scale {
                        let (x, y) = (ox + col * glyph_scale + dx, oy + row * glyph_scale + dy);
                        if x < size && y < size {
                            data[y * size + x] = 0.92;
                        }
                    }
                }
            }
        }
    }
    img = Image::new(size, size, 1, data).expect("fixture samples are in range");
    quantize_image(&img)
}

/// The standard fixture: [`FIXTURE_COUNT`] images of [`FIXTURE_SIZE`] pixels.
pub fn fixture_images(seed: u64) -> Vec<Image> {
    fixture_set(FIXTURE_COUNT, FIXTURE_SIZE, seed)
}

pub fn fixture_set(count: usize, size: usize, seed: u64) -> Vec<Image> {
    (0..count).into_par_iter().map(|i| fixture_image(i, seed, size)).collect()
}

/// Writes `fixture_000.png`, ... into `dir`.
pub fn write_fixture(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    ensure_arg!(count > 0 && size > 0, "fixture count and size must be positive");
    create_dir(dir)?;
    fixture_set(count, size, seed)
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = dir.join(format!("fixture_{i:03}.png"));
            save_image(img, &p)?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_restrict_kernel_sizes() {
        assert_eq!(SplitProfile::named("mini").unwrap().kernel_size_choices, vec![1, 3, 5]);
        assert_eq!(SplitProfile::named("plus").unwrap().kernel_size_choices, vec![7, 9, 11]);
        assert_eq!(SplitProfile::named("paper-q3").unwrap().jpeg_quality, 3);
        assert_eq!(SplitProfile::named("mura-sr").unwrap().config(), DegradationConfig::default());
        assert!(SplitProfile::named("huge").is_err());
        for name in SplitProfile::NAMES {
            SplitProfile::named(name).unwrap().config().validate().unwrap();
        }
    }

    #[test]
    fn fixture_is_seeded_and_varied() {
        let a = fixture_image(3, 11, 96);
        assert_eq!(a, fixture_image(3, 11, 96));
        assert_ne!(a, fixture_image(4, 11, 96));
        assert_ne!(a, fixture_image(3, 12, 96));
        let d = a.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!(var > 1e-3, "fixture too flat: {var}");
        assert!(d.iter().all(|v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-9));
    }

    #[test]
    fn quantize_is_idempotent() {
        let img = fixture_image(0, 1, 16);
        assert_eq!(quantize_image(&img), img);
    }
}
