//! Separate-then-joint training and model evaluation.
//!
//! Stage one trains the denoiser on `(y, y')` and the SR net on `(y', x)`
//! independently; stage two chains them and fine-tunes on `(y, x)` with one
//! Adam state per parameter group, so `lr_denoise` and `lr_sr` act as
//! separate learning rates. A group whose rate is zero is bound as constants
//! and never stepped, which keeps it bit-identical.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, ParamStore, Scalar, Tensor, Var};
use crate::degrade::{bicubic_resize, degrade_pair, DegradationConfig};
use crate::error::{ensure_arg, Result};
use crate::image::{to_luma, Image};
use crate::metrics::{evaluate_set, MetricsReport};
use crate::models::{d_loss, denoiser_forward, discriminator_forward, g_loss, sr_forward, ModelState};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_l1: f64,
    pub w_ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_l1: 1.0, w_ssim: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub enabled: bool,
    pub weight: f64,
    pub d_lr: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            enabled: false,
            weight: 1e-3,
            d_lr: 1e-4,
        }
    }
}

/// How training patches are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Sampling {
    /// A fresh random crop, degraded with a fresh seed, for every sample.
    #[default]
    OnTheFly,
    /// A pool degraded once up front; batches draw from it.
    Fixed { pool_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// HR patch side in pixels.
    pub patch_size: usize,
    pub batch_size: usize,
    pub steps_separate: usize,
    pub steps_joint: usize,
    pub lr_denoise: f64,
    pub lr_sr: f64,
    pub loss_weights: LossWeights,
    pub adversarial: AdversarialConfig,
    pub seed: u64,
    /// Evaluate on the held-out set every this many steps (0 disables).
    pub eval_every: usize,
    pub sampling: Sampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 96,
            batch_size: 8,
            steps_separate: 2000,
            steps_joint: 1000,
            lr_denoise: 1e-4,
            lr_sr: 1e-4,
            loss_weights: LossWeights::default(),
            adversarial: AdversarialConfig::default(),
            seed: 0,
            eval_every: 0,
            sampling: Sampling::OnTheFly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, scale: usize) -> Result<()> {
        ensure_arg!(self.patch_size > 0 && self.patch_size % scale == 0, "patch_size {} not divisible by scale {scale}", self.patch_size);
        ensure_arg!(self.batch_size > 0, "batch_size must be positive");
        ensure_arg!(self.lr_denoise >= 0.0 && self.lr_sr >= 0.0, "learning rates must be non-negative");
        let w = self.loss_weights;
        ensure_arg!(w.w_l1 >= 0.0 && w.w_ssim >= 0.0, "loss weights must be non-negative");
        ensure_arg!(w.w_l1 + w.w_ssim > 0.0, "at least one loss weight must be positive");
        ensure_arg!(self.adversarial.weight >= 0.0 && self.adversarial.d_lr >= 0.0, "adversarial weight and d_lr must be non-negative");
        Ok(())
    }
}

/// `w_l1 * l1 + w_ssim * (1 - ssim)`; a zero weight drops its term entirely.
pub fn composite_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, w: &LossWeights) -> Result<Var> {
    ensure_arg!(g.shape(pred) == g.shape(target), "composite_loss: shape mismatch {} vs {}", g.shape(pred), g.shape(target));
    let mut total: Option<Var> = None;
    if w.w_l1 > 0.0 {
        let l = g.l1_loss(pred, target)?;
        total = Some(if w.w_l1 == 1.0 { l } else { g.scale(l, w.w_l1) });
    }
    if w.w_ssim > 0.0 {
        let s = g.ssim_loss(pred, target)?;
        let s = if w.w_ssim == 1.0 { s } else { g.scale(s, w.w_ssim) };
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    total.ok_or_else(|| crate::Error::arg("all loss weights are zero"))
}

/// One training example: HR crop, its degraded LR and clean LR.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub hr: Image,
    pub lr_noisy: Image,
    pub lr_clean: Image,
}

pub struct Batch<T> {
    pub hr: Tensor<T>,
    pub lr_noisy: Tensor<T>,
    pub lr_clean: Tensor<T>,
}

const STREAM_CROP: u64 = 2;

/// Random HR crops degraded on demand. Batches are a pure function of
/// `(seed, step)`, so a run can be replayed exactly.
pub struct PatchSampler {
    hr: Vec<Image>,
    cfg: DegradationConfig,
    patch: usize,
    batch: usize,
    seed: u64,
    pool: Option<Vec<Sample>>,
}

impl PatchSampler {
    pub fn new(
        hr: Vec<Image>,
        cfg: DegradationConfig,
        patch: usize,
        batch: usize,
        seed: u64,
        sampling: Sampling,
    ) -> Result<Self> {
        ensure_arg!(!hr.is_empty(), "no training images");
        cfg.validate()?;
        ensure_arg!(batch > 0, "batch size must be positive");
        ensure_arg!(patch > 0 && patch % cfg.scale == 0, "patch {patch} not divisible by scale {}", cfg.scale);
        let hr: Vec<Image> = hr.iter().map(|i| if i.channels() == 1 { i.clone() } else { to_luma(i) }).collect();
        for img in &hr {
            ensure_arg!(
                img.width() >= patch && img.height() >= patch,
                "training image {}x{} smaller than patch {patch}",
                img.width(),
                img.height()
            );
        }
        let mut sampler = PatchSampler {
            hr,
            cfg,
            patch,
            batch,
            seed,
            pool: None,
        };
        if let Sampling::Fixed { pool_size } = sampling {
            ensure_arg!(pool_size > 0, "pool_size must be positive");
            let pool = (0..pool_size as u64).map(|k| sampler.sample(k)).collect::<Result<_>>()?;
            sampler.pool = Some(pool);
        }
        Ok(sampler)
    }

    pub fn scale(&self) -> usize {
        self.cfg.scale
    }

    /// The `key`-th sample of the on-the-fly stream.
    pub fn sample(&self, key: u64) -> Result<Sample> {
        let s = rng::substream_seed(self.seed, key);
        let mut r = rng::stream(s, STREAM_CROP);
        let img = &self.hr[rng::index(&mut r, self.hr.len())];
        let x0 = rng::index(&mut r, img.width() - self.patch + 1);
        let y0 = rng::index(&mut r, img.height() - self.patch + 1);
        let hr = img.crop(x0, y0, self.patch, self.patch)?;
        let pair = degrade_pair(&hr, &self.cfg, s)?;
        Ok(Sample {
            hr,
            lr_noisy: pair.y,
            lr_clean: pair.y_clean,
        })
    }

    pub fn batch<T: Scalar>(&self, step: u64) -> Result<Batch<T>> {
        let samples: Vec<Sample> = match &self.pool {
            None => (0..self.batch as u64)
                .map(|i| self.sample(step * self.batch as u64 + i))
                .collect::<Result<_>>()?,
            Some(pool) => {
                let mut r = rng::stream(rng::substream_seed(self.seed, step), STREAM_CROP + 1);
                (0..self.batch).map(|_| pool[rng::index(&mut r, pool.len())].clone()).collect()
            }
        };
        let stack = |f: fn(&Sample) -> &Image| Tensor::from_images(&samples.iter().map(f).collect::<Vec<_>>());
        Ok(Batch {
            hr: stack(|s| &s.hr)?,
            lr_noisy: stack(|s| &s.lr_noisy)?,
            lr_clean: stack(|s| &s.lr_clean)?,
        })
    }
}

/// Held-out full images.
#[derive(Debug, Clone, Default)]
pub struct EvalSet {
    pub items: Vec<(String, Sample)>,
}

impl EvalSet {
    /// Degrades every image once with a per-image seed derived from `seed`.
    pub fn synthesize(hr: &[Image], cfg: &DegradationConfig, seed: u64) -> Result<Self> {
        let items = hr
            .iter()
            .enumerate()
            .map(|(i, img)| {
                let img = if img.channels() == 1 { img.clone() } else { to_luma(img) };
                let img = img.center_crop_to_multiple(cfg.scale)?;
                let pair = degrade_pair(&img, cfg, rng::substream_seed(seed, i as u64))?;
                Ok((
                    format!("{i:04}"),
                    Sample {
                        hr: img,
                        lr_noisy: pair.y,
                        lr_clean: pair.y_clean,
                    },
                ))
            })
            .collect::<Result<_>>()?;
        Ok(EvalSet { items })
    }
}

/// Which LR images a model is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalInput {
    Noisy,
    Clean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub model: MetricsReport,
    pub bicubic: MetricsReport,
}

/// Runs `sr(denoiser(lr))` on whole images and scores it against HR next to
/// the bicubic baseline of the same input.
pub fn evaluate_model<T: Scalar>(
    state: &ModelState<T>,
    pairs: &[(&str, &Image, &Image)],
    scale: usize,
    crop: usize,
) -> Result<ModelEval> {
    ensure_arg!(scale == state.spec.sr.scale, "model scale {} but evaluation scale {scale}", state.spec.sr.scale);
    let mut outputs = Vec::with_capacity(pairs.len());
    let mut baselines = Vec::with_capacity(pairs.len());
    for (id, lr, hr) in pairs {
        ensure_arg!(
            lr.width() * scale == hr.width() && lr.height() * scale == hr.height(),
            "{id}: LR {}x{} times {scale} does not match HR {}x{}",
            lr.width(),
            lr.height(),
            hr.width(),
            hr.height()
        );
        outputs.push(state.restore(lr)?);
        baselines.push(bicubic_resize(lr, hr.width(), hr.height())?);
    }
    let scored = |imgs: &[Image]| {
        let triples: Vec<(&str, &Image, &Image)> =
            pairs.iter().zip(imgs).map(|((id, _, hr), out)| (*id, *hr, out)).collect();
        evaluate_set(&triples, crop)
    };
    Ok(ModelEval {
        model: scored(&outputs)?,
        bicubic: scored(&baselines)?,
    })
}

pub fn evaluate_on<T: Scalar>(state: &ModelState<T>, set: &EvalSet, input: EvalInput, crop: usize) -> Result<ModelEval> {
    let pairs: Vec<(&str, &Image, &Image)> = set
        .items
        .iter()
        .map(|(id, s)| {
            let lr = match input {
                EvalInput::Noisy => &s.lr_noisy,
                EvalInput::Clean => &s.lr_clean,
            };
            (id.as_str(), lr, &s.hr)
        })
        .collect();
    evaluate_model(state, &pairs, state.spec.sr.scale, crop)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseEval {
    /// Denoiser output against clean LR.
    pub denoised: MetricsReport,
    /// Noisy input against clean LR.
    pub noisy: MetricsReport,
}

pub fn evaluate_denoiser<T: Scalar>(state: &ModelState<T>, set: &EvalSet) -> Result<DenoiseEval> {
    let outs: Vec<Image> = set.items.iter().map(|(_, s)| state.denoise(&s.lr_noisy)).collect::<Result<_>>()?;
    let den: Vec<(&str, &Image, &Image)> = set
        .items
        .iter()
        .zip(&outs)
        .map(|((id, s), o)| (id.as_str(), &s.lr_clean, o))
        .collect();
    let noisy: Vec<(&str, &Image, &Image)> = set
        .items
        .iter()
        .map(|(id, s)| (id.as_str(), &s.lr_clean, &s.lr_noisy))
        .collect();
    Ok(DenoiseEval {
        denoised: evaluate_set(&den, 0)?,
        noisy: evaluate_set(&noisy, 0)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Denoise,
    Sr,
    Joint,
}

pub const LOG_VERSION: u32 = 1;

/// One JSON-lines training log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub version: u32,
    pub phase: Phase,
    pub step: usize,
    pub loss: f64,
    pub lr_denoise: f64,
    pub lr_sr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_psnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_ssim: Option<f64>,
}

impl LogRecord {
    fn new(phase: Phase, step: usize, loss: f64, cfg: &TrainConfig) -> Self {
        LogRecord {
            version: LOG_VERSION,
            phase,
            step,
            loss,
            lr_denoise: cfg.lr_denoise,
            lr_sr: cfg.lr_sr,
            g_loss: None,
            d_loss: None,
            eval_psnr_db: None,
            eval_ssim: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

fn check_scale<T>(state: &ModelState<T>, data: &PatchSampler) -> Result<()> {
    ensure_arg!(
        state.spec.sr.scale == data.scale(),
        "model scale {} but data scale {}",
        state.spec.sr.scale,
        data.scale()
    );
    Ok(())
}

fn loss_is_finite(v: f64, phase: Phase, step: usize) -> Result<()> {
    ensure_arg!(v.is_finite(), "{phase:?} loss became non-finite at step {step}");
    Ok(())
}

fn with_eval(mut rec: LogRecord, eval: Option<(f64, f64)>) -> LogRecord {
    if let Some((p, s)) = eval {
        rec.eval_psnr_db = Some(p);
        rec.eval_ssim = Some(s);
    }
    rec
}

fn due(cfg: &TrainConfig, step: usize, last: usize) -> bool {
    cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == last)
}

/// Adam on the denoiser minimizing `composite(denoiser(y), y')`.
pub fn train_denoise<T: Scalar>(
    state: &mut ModelState<T>,
    data: &PatchSampler,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<Vec<LogRecord>> {
    cfg.validate(state.spec.sr.scale)?;
    check_scale(state, data)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr_denoise), &state.denoiser);
    let mut log = Vec::with_capacity(cfg.steps_separate);
    for step in 0..cfg.steps_separate {
        let batch: Batch<T> = data.batch(step as u64)?;
        let mut g = Graph::new();
        let p = g.bind(&state.denoiser);
        let y = g.input(&batch.lr_noisy);
        let target = g.input(&batch.lr_clean);
        let out = denoiser_forward(&mut g, &state.spec.denoiser, &p, y)?;
        let loss = composite_loss(&mut g, out, target, &cfg.loss_weights)?;
        let value = g.scalar(loss).as_f64();
        loss_is_finite(value, Phase::Denoise, step)?;
        if cfg.lr_denoise > 0.0 {
            g.backward(loss)?;
            g.accumulate_grads(&p, &mut state.denoiser)?;
            adam.step(&mut state.denoiser)?;
        }
        let ev = match eval {
            Some(set) if due(cfg, step + 1, cfg.steps_separate) => {
                let r = evaluate_denoiser(state, set)?;
                Some((r.denoised.mean_psnr_db, r.denoised.mean_ssim))
            }
            _ => None,
        };
        log.push(with_eval(LogRecord::new(Phase::Denoise, step, value, cfg), ev));
    }
    Ok(log)
}

/// Adam on the SR net minimizing `composite(sr(y'), x)`.
pub fn train_sr<T: Scalar>(
    state: &mut ModelState<T>,
    data: &PatchSampler,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<Vec<LogRecord>> {
    cfg.validate(state.spec.sr.scale)?;
    check_scale(state, data)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr_sr), &state.sr);
    let mut log = Vec::with_capacity(cfg.steps_separate);
    for step in 0..cfg.steps_separate {
        let batch: Batch<T> = data.batch(step as u64)?;
        let mut g = Graph::new();
        let p = g.bind(&state.sr);
        let y = g.input(&batch.lr_clean);
        let target = g.input(&batch.hr);
        let out = sr_forward(&mut g, &state.spec.sr, &p, y)?;
        let loss = composite_loss(&mut g, out, target, &cfg.loss_weights)?;
        let value = g.scalar(loss).as_f64();
        loss_is_finite(value, Phase::Sr, step)?;
        if cfg.lr_sr > 0.0 {
            g.backward(loss)?;
            g.accumulate_grads(&p, &mut state.sr)?;
            adam.step(&mut state.sr)?;
        }
        let ev = match eval {
            Some(set) if due(cfg, step + 1, cfg.steps_separate) => {
                let r = evaluate_on(&state.clone().with_identity_denoiser(), set, EvalInput::Clean, 0)?;
                Some((r.model.mean_psnr_db, r.model.mean_ssim))
            }
            _ => None,
        };
        log.push(with_eval(LogRecord::new(Phase::Sr, step, value, cfg), ev));
    }
    Ok(log)
}

fn bind_group<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, trainable: bool) -> Vec<Var> {
    if trainable {
        g.bind(store)
    } else {
        g.bind_frozen(store)
    }
}

/// End-to-end fine-tuning of `sr(denoiser(y))` against `x`.
///
/// The denoiser group comes from `denoiser` and the SR group from `sr`;
/// both must be supplied. The discriminator is taken from `sr` and only
/// touched when the adversarial term is enabled.
pub fn train_joint<T: Scalar>(
    denoiser: Option<&ModelState<T>>,
    sr: Option<&ModelState<T>>,
    data: &PatchSampler,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<(ModelState<T>, Vec<LogRecord>)> {
    let (Some(den), Some(srs)) = (denoiser, sr) else {
        return Err(crate::Error::Argument(
            "joint training needs both a pretrained denoiser and a pretrained SR net".into(),
        ));
    };
    let mut state = srs.clone();
    state.spec.denoiser = den.spec.denoiser.clone();
    state.denoiser = den.denoiser.clone();
    cfg.validate(state.spec.sr.scale)?;
    check_scale(&state, data)?;

    let train_den = cfg.lr_denoise > 0.0;
    let train_sr = cfg.lr_sr > 0.0;
    let adv = cfg.adversarial;
    let mut adam_den = Adam::new(AdamConfig::with_lr(cfg.lr_denoise), &state.denoiser);
    let mut adam_sr = Adam::new(AdamConfig::with_lr(cfg.lr_sr), &state.sr);
    let mut adam_d = Adam::new(AdamConfig::with_lr(adv.d_lr), &state.discriminator);
    let mut log = Vec::with_capacity(cfg.steps_joint);
    for step in 0..cfg.steps_joint {
        let batch: Batch<T> = data.batch(step as u64)?;
        let mut g = Graph::new();
        let pd = bind_group(&mut g, &state.denoiser, train_den);
        let ps = bind_group(&mut g, &state.sr, train_sr);
        let y = g.input(&batch.lr_noisy);
        let target = g.input(&batch.hr);
        let clean = denoiser_forward(&mut g, &state.spec.denoiser, &pd, y)?;
        let out = sr_forward(&mut g, &state.spec.sr, &ps, clean)?;
        let mut loss = composite_loss(&mut g, out, target, &cfg.loss_weights)?;
        let mut rec_g = None;
        if adv.enabled {
            let pdis = g.bind_frozen(&state.discriminator);
            let logits = discriminator_forward(&mut g, &state.spec.discriminator, &pdis, out)?;
            let gl = g_loss(&mut g, logits)?;
            rec_g = Some(g.scalar(gl).as_f64());
            let weighted = g.scale(gl, adv.weight);
            loss = g.add(loss, weighted)?;
        }
        let value = g.scalar(loss).as_f64();
        loss_is_finite(value, Phase::Joint, step)?;
        if train_den || train_sr {
            g.backward(loss)?;
            if train_den {
                g.accumulate_grads(&pd, &mut state.denoiser)?;
                adam_den.step(&mut state.denoiser)?;
            }
            if train_sr {
                g.accumulate_grads(&ps, &mut state.sr)?;
                adam_sr.step(&mut state.sr)?;
            }
        }
        let mut rec_d = None;
        if adv.enabled && adv.d_lr > 0.0 {
            let fake = g.tensor(out);
            let mut gd = Graph::new();
            let pdis = gd.bind(&state.discriminator);
            let real_in = gd.input(&batch.hr);
            let fake_in = gd.input(&fake);
            let real = discriminator_forward(&mut gd, &state.spec.discriminator, &pdis, real_in)?;
            let fake = discriminator_forward(&mut gd, &state.spec.discriminator, &pdis, fake_in)?;
            let dl = d_loss(&mut gd, real, fake)?;
            rec_d = Some(gd.scalar(dl).as_f64());
            gd.backward(dl)?;
            gd.accumulate_grads(&pdis, &mut state.discriminator)?;
            adam_d.step(&mut state.discriminator)?;
        }
        let ev = match eval {
            Some(set) if due(cfg, step + 1, cfg.steps_joint) => {
                let r = evaluate_on(&state, set, EvalInput::Noisy, 0)?;
                Some((r.model.mean_psnr_db, r.model.mean_ssim))
            }
            _ => None,
        };
        let mut rec = with_eval(LogRecord::new(Phase::Joint, step, value, cfg), ev);
        rec.g_loss = rec_g;
        rec.d_loss = rec_d;
        log.push(rec);
    }
    Ok((state, log))
}
