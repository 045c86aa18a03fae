//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! straight to stderr (so it shows even when output is captured) and then
//! asserts. A global lock runs the criteria one at a time so the timed ones
//! are not slowed by concurrent training.

use std::io::Write as _;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use radsr::autodiff::gradcheck::{op_suite, GradCheckConfig};
use radsr::dataset::{fixture_set, synth_dataset, verify_manifest, write_fixture};
use radsr::degrade::{
    degrade_with_params, gaussian_kernel, motion_kernel, poisson_noise, DegradationConfig, DegradationParams,
    GaussianParams, MotionParams,
};
use radsr::metrics::{psnr, ssim, SSIM_C1};
use radsr::models::{gan_value, network_suite, ModelSpec, ModelState};
use radsr::rng;
use radsr::training::{
    evaluate_denoiser, evaluate_on, train_denoise, train_joint, train_sr, EvalInput, EvalSet, PatchSampler, Sampling,
    TrainConfig,
};
use radsr::Image;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("[acceptance] criterion {id:>2} {:<4} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

/// Runs `body` under the lock, prints its line and fails the test on `false`.
fn criterion(id: u32, name: &str, body: impl FnOnce() -> (bool, String)) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let (ok, detail) = body();
    report(id, name, ok, &detail);
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

#[test]
fn c01_gradient_oracle() {
    criterion(1, "gradient oracle", || {
        let cfg = GradCheckConfig::default();
        let t = Instant::now();
        let mut reports = op_suite(&cfg).expect("op suite runs");
        reports.extend(network_suite(&cfg).expect("network suite runs"));
        let elapsed = t.elapsed();
        let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
        let ok = failed.is_empty()
            && worst < 1e-4
            && elapsed < Duration::from_secs(60)
            && names.iter().any(|n| n.starts_with("denoiser"))
            && names.iter().any(|n| n.starts_with("sr"));
        (
            ok,
            format!("{} checks, worst rel err {worst:.2e}, failed {failed:?}, {:.1}s", reports.len(), elapsed.as_secs_f64()),
        )
    });
}

#[test]
fn c02_metric_oracles() {
    criterion(2, "metric oracles", || {
        let base = Image::from_fn(64, 64, |x, y| 0.3 + 0.4 * ((x * 7 + y * 13) % 17) as f64 / 17.0).unwrap();
        let shifted = |d: f64| Image::new(64, 64, 1, base.data().iter().map(|v| v + d).collect()).unwrap();
        let p255 = psnr(&base, &shifted(1.0 / 255.0), 0).unwrap();
        let p01 = psnr(&base, &shifted(0.1), 0).unwrap();
        let exact255 = 20.0 * 255f64.log10();
        let psnr_ok = (p255 - exact255).abs() < 1e-6 && (p255 - 48.1308).abs() < 1e-4 && (p01 - 20.0).abs() < 1e-6;

        let self_ssim = ssim(&base, &base, 0).unwrap();

        let (c, d) = (0.4, 0.25);
        let flat_a = Image::filled(32, 32, 1, c).unwrap();
        let flat_b = Image::filled(32, 32, 1, c + d).unwrap();
        let want = (2.0 * c * (c + d) + SSIM_C1) / (c * c + (c + d) * (c + d) + SSIM_C1);
        let flat_err = (ssim(&flat_a, &flat_b, 0).unwrap() - want).abs();

        let other = Image::from_fn(64, 64, |x, y| ((x * x + 3 * y) % 23) as f64 / 23.0).unwrap();
        let asym = (ssim(&base, &other, 0).unwrap() - ssim(&other, &base, 0).unwrap()).abs();
        let psnr_asym = (psnr(&base, &other, 0).unwrap() - psnr(&other, &base, 0).unwrap()).abs();

        let ok = psnr_ok && self_ssim == 1.0 && flat_err < 1e-9 && asym < 1e-12 && psnr_asym < 1e-12;
        (
            ok,
            format!(
                "psnr(1/255) {p255:.6} dB, psnr(0.1) {p01:.6} dB, ssim(a,a) {self_ssim}, flat err {flat_err:.1e}, asym {asym:.1e}"
            ),
        )
    });
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "HR", "LRnoisy", "LRclean"] {
        let mut files: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            out.push((f.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&f).unwrap()));
        }
    }
    out
}

#[test]
fn c03_degradation_determinism() {
    criterion(3, "degradation determinism", || {
        let tmp = tempfile::tempdir().unwrap();
        let hr = tmp.path().join("hr");
        write_fixture(&hr, 64, 96, 1).unwrap();
        let cfg = DegradationConfig::default();
        let t = Instant::now();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        synth_dataset(&hr, &a, &cfg, 42).unwrap();
        synth_dataset(&hr, &b, &cfg, 42).unwrap();
        let ra = verify_manifest(&a.join("manifest.json")).unwrap();
        let rb = verify_manifest(&b.join("manifest.json")).unwrap();
        let elapsed = t.elapsed();
        let (ta, tb) = (tree(&a), tree(&b));
        let identical = ta == tb;
        let ok = ra.ok() && rb.ok() && ra.entries_checked == 64 && identical && elapsed < Duration::from_secs(30);
        (
            ok,
            format!(
                "{} files identical: {identical}, mismatches {}+{}, {:.1}s",
                ta.len(),
                ra.mismatches.len() + ra.missing.len(),
                rb.mismatches.len() + rb.missing.len(),
                elapsed.as_secs_f64()
            ),
        )
    });
}

#[test]
fn c04_kernel_and_pipeline_algebra() {
    criterion(4, "kernel/pipeline algebra", || {
        let mut worst_sum = 0.0f64;
        for size in [1, 3, 5, 7, 9, 11] {
            for sigma in [0.2, 0.5, 1.0, 1.7, 3.0] {
                let s: f64 = gaussian_kernel(size, sigma).unwrap().weights().iter().sum();
                worst_sum = worst_sum.max((s - 1.0).abs());
            }
            for k in 0..12 {
                let angle = k as f64 * std::f64::consts::PI / 12.0;
                let s: f64 = motion_kernel(size, angle).unwrap().weights().iter().sum();
                worst_sum = worst_sum.max((s - 1.0).abs());
            }
        }

        let mut worst_psnr = f64::INFINITY;
        for (i, x) in fixture_set(4, 96, 9).iter().enumerate() {
            for scale in [2, 4] {
                let off = DegradationParams::clean(100, scale, i as u64);
                let mut identity = off;
                identity.gaussian = GaussianParams { apply: true, size: 1, sigma: 1.0 };
                identity.motion = MotionParams { apply: true, length: 1, angle: 0.3 };
                for p in [off, identity] {
                    let (y, y_clean) = degrade_with_params(x, &p).unwrap();
                    worst_psnr = worst_psnr.min(psnr(&y, &y_clean, 0).unwrap());
                }
            }
        }
        let ok = worst_sum <= 1e-12 && worst_psnr >= 50.0;
        (ok, format!("max |sum-1| {worst_sum:.1e}, min degenerate PSNR {worst_psnr:.2} dB"))
    });
}

#[test]
fn c05_poisson_statistics() {
    criterion(5, "poisson statistics", || {
        let n = 100_000usize;
        let mut ok = true;
        let mut details = Vec::new();
        for (i, (s, peak)) in [(0.5, 30.0), (0.2, 300.0), (0.5, 100.0)].into_iter().enumerate() {
            let img = Image::filled(400, 250, 1, s).unwrap();
            let out = poisson_noise(&img, peak, &mut rng::stream(11 + i as u64, 1)).unwrap();
            let m = out.data().iter().sum::<f64>() / n as f64;
            let v = out.data().iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            // Poisson(l)/peak: variance l/peak^2, fourth central moment l(1+3l)/peak^4.
            // The cases keep P(draw > peak) negligible so the clamp at 1 does not bias them.
            let l = s * peak;
            let var = s / peak;
            let mu4 = l * (1.0 + 3.0 * l) / peak.powi(4);
            let se_mean = (var / n as f64).sqrt();
            let se_var = ((mu4 - var * var) / n as f64).sqrt();
            let (zm, zv) = ((m - s) / se_mean, (v - var) / se_var);
            ok &= zm.abs() < 3.0 && zv.abs() < 3.0;
            details.push(format!("s={s} peak={peak}: z_mean {zm:+.2}, z_var {zv:+.2}"));
        }
        (ok, details.join("; "))
    });
}

#[test]
fn c06_identity_at_init() {
    criterion(6, "identity at init", || {
        let mut ok = true;
        let mut details = Vec::new();
        for scale in [2, 4] {
            let state = ModelState::<f64>::init(&ModelSpec::with_scale(scale), 17).unwrap();
            let cfg = DegradationConfig { scale, ..Default::default() };
            let set = EvalSet::synthesize(&fixture_set(4, 96, 2), &cfg, 3).unwrap();
            let identity = set.items.iter().all(|(_, s)| state.denoise(&s.lr_noisy).unwrap() == s.lr_noisy);
            let mut equal = true;
            for input in [EvalInput::Noisy, EvalInput::Clean] {
                let e = evaluate_on(&state, &set, input, 0).unwrap();
                equal &= e.model == e.bicubic;
            }
            ok &= identity && equal;
            details.push(format!("x{scale}: denoiser identity {identity}, eval == bicubic {equal}"));
        }
        (ok, details.join("; "))
    });
}

const SCALE: usize = 2;
const JOINT_STEPS: usize = 500;

struct Pipeline {
    denoise_secs: f64,
    denoised_psnr: f64,
    noisy_psnr: f64,
    sr_clean_psnr: f64,
    sr_noisy_psnr: f64,
    frozen_psnr: f64,
    joint_psnr: f64,
    joint_min_psnr: f64,
}

fn train_config() -> TrainConfig {
    TrainConfig {
        patch_size: 32 * SCALE,
        batch_size: 8,
        steps_separate: 2000,
        steps_joint: JOINT_STEPS,
        lr_denoise: 1e-4,
        lr_sr: 1e-4,
        eval_every: 100,
        ..TrainConfig::default()
    }
}

/// Separate pretraining of both stages followed by joint fine-tuning, shared
/// by the three learning criteria.
fn pipeline() -> &'static Pipeline {
    static CELL: OnceLock<Pipeline> = OnceLock::new();
    CELL.get_or_init(|| {
        let dcfg = DegradationConfig { scale: SCALE, ..Default::default() };
        let eval = EvalSet::synthesize(&fixture_set(16, 96, 2), &dcfg, 3).unwrap();
        let sampler = |seed| PatchSampler::new(fixture_set(64, 96, 1), dcfg.clone(), 32 * SCALE, 8, seed, Sampling::OnTheFly).unwrap();
        let cfg = train_config();
        let spec = ModelSpec::with_scale(SCALE);

        let data = sampler(5);
        let t = Instant::now();
        let mut den = ModelState::<f32>::init(&spec, 7).unwrap();
        train_denoise(&mut den, &data, &cfg, None).unwrap();
        let denoise_secs = t.elapsed().as_secs_f64();
        let d = evaluate_denoiser(&den.cast::<f64>(), &eval).unwrap();

        let mut sr = ModelState::<f32>::init(&spec, 8).unwrap();
        train_sr(&mut sr, &data, &cfg, None).unwrap();
        let sr64 = sr.cast::<f64>();
        let sr_clean = evaluate_on(&sr64, &eval, EvalInput::Clean, 0).unwrap();
        let sr_noisy = evaluate_on(&sr64, &eval, EvalInput::Noisy, 0).unwrap();

        let mut frozen = sr.clone();
        frozen.denoiser = den.denoiser.clone();
        let frozen_eval = evaluate_on(&frozen.cast::<f64>(), &eval, EvalInput::Noisy, 0).unwrap();

        let (joint, log) = train_joint(Some(&den), Some(&sr), &sampler(6), &cfg, Some(&eval)).unwrap();
        let joint_eval = evaluate_on(&joint.cast::<f64>(), &eval, EvalInput::Noisy, 0).unwrap();
        let joint_min_psnr = log.iter().filter_map(|r| r.eval_psnr_db).fold(f64::INFINITY, f64::min);

        Pipeline {
            denoise_secs,
            denoised_psnr: d.denoised.mean_psnr_db,
            noisy_psnr: d.noisy.mean_psnr_db,
            sr_clean_psnr: sr_clean.model.mean_psnr_db,
            sr_noisy_psnr: sr_noisy.model.mean_psnr_db,
            frozen_psnr: frozen_eval.model.mean_psnr_db,
            joint_psnr: joint_eval.model.mean_psnr_db,
            joint_min_psnr,
        }
    })
}

#[test]
fn c07_desk_scale_denoising() {
    criterion(7, "desk-scale denoising", || {
        let p = pipeline();
        let gain = p.denoised_psnr - p.noisy_psnr;
        let ok = gain >= 0.5 && p.denoise_secs < 600.0;
        (
            ok,
            format!(
                "noisy {:.3} dB -> denoised {:.3} dB (gain {gain:+.3} dB), 2000 steps in {:.0}s",
                p.noisy_psnr, p.denoised_psnr, p.denoise_secs
            ),
        )
    });
}

#[test]
fn c08_domain_shift_direction() {
    criterion(8, "domain shift direction", || {
        let p = pipeline();
        let gap = p.sr_clean_psnr - p.sr_noisy_psnr;
        (gap >= 1.0, format!("clean-trained SR: clean LR {:.3} dB, degraded LR {:.3} dB (gap {gap:.3} dB)", p.sr_clean_psnr, p.sr_noisy_psnr))
    });
}

#[test]
fn c09_joint_training_direction() {
    criterion(9, "joint training direction", || {
        let p = pipeline();
        let gain = p.joint_psnr - p.frozen_psnr;
        (
            gain >= 0.1 && p.joint_min_psnr >= p.frozen_psnr,
            format!(
                "separate {:.3} dB -> joint {:.3} dB (gain {gain:+.3} dB, {JOINT_STEPS} steps, lowest periodic eval {:.3} dB)",
                p.frozen_psnr, p.joint_psnr, p.joint_min_psnr
            ),
        )
    });
}

#[test]
fn c10_gan_algebra() {
    criterion(10, "gan algebra", || {
        let zero = gan_value(&[0.0; 4], &[0.0; 4]).unwrap();
        let ln2 = std::f64::consts::LN_2;
        let closed = (zero.d_loss - 2.0 * ln2).abs() < 1e-9 && (zero.g_loss - ln2).abs() < 1e-9;

        // Pushing real logits up and fake logits down must shrink the
        // discriminator loss towards 0 and grow the generator loss.
        let mut monotone = true;
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=40 {
            let t = k as f64 * 0.5;
            let v = gan_value(&[t, t + 0.1], &[-t, -t - 0.1]).unwrap();
            if let Some((d, g)) = prev {
                monotone &= v.d_loss < d && v.g_loss > g;
            }
            prev = Some((v.d_loss, v.g_loss));
        }
        let (d_last, _) = prev.unwrap();
        let ok = closed && monotone && d_last < 1e-8;
        (
            ok,
            format!("D(0,0) {:.12}, G(0) {:.12}, sweep monotone {monotone}, D at logit 20 {d_last:.1e}", zero.d_loss, zero.g_loss),
        )
    });
}

#[test]
fn c11_freezing_contracts() {
    criterion(11, "freezing contracts", || {
        let spec = ModelSpec::tiny(SCALE, Default::default());
        let dcfg = DegradationConfig { scale: SCALE, ..Default::default() };
        let data = PatchSampler::new(fixture_set(8, 48, 4), dcfg, 16 * SCALE, 2, 9, Sampling::OnTheFly).unwrap();
        let den = ModelState::<f32>::randomized(&spec, 21, 0.3).unwrap();
        let sr = ModelState::<f32>::randomized(&spec, 22, 0.3).unwrap();
        let bits = |s: &radsr::autodiff::ParamStore<f32>| -> Vec<u32> {
            s.iter().flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
        };
        let mut details = Vec::new();
        let mut ok = true;
        for (lr_denoise, lr_sr) in [(0.0, 1e-3), (1e-3, 0.0)] {
            let cfg = TrainConfig { patch_size: 16 * SCALE, batch_size: 2, steps_joint: 100, lr_denoise, lr_sr, ..TrainConfig::default() };
            let (out, _) = train_joint(Some(&den), Some(&sr), &data, &cfg, None).unwrap();
            let den_same = bits(&out.denoiser) == bits(&den.denoiser);
            let sr_same = bits(&out.sr) == bits(&sr.sr);
            ok &= if lr_denoise == 0.0 { den_same && !sr_same } else { sr_same && !den_same };
            details.push(format!("alpha={lr_denoise} beta={lr_sr}: denoiser unchanged {den_same}, sr unchanged {sr_same}"));
        }
        (ok, details.join("; "))
    });
}
