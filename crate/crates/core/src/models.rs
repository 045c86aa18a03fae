//! Denoising head, SR backbone and discriminator.
//!
//! Each network's parameters live in a [`ParamStore`] whose order is fixed by
//! a layout function; forwards consume the bound [`Var`]s in that order.
//! Layers marked zero-init make the denoiser an exact identity and the SR
//! net an exact bicubic upsampler at initialization.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::gradcheck::{grad_check, random_tensor, GradCheckConfig, GradCheckReport};
use crate::autodiff::{bce_term, Checkpoint, Graph, ParamStore, Scalar, Shape, Tensor, Var};
use crate::degrade::ResizePlan;
use crate::error::{ensure_arg, Error, Result};
use crate::image::Image;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AttentionMode {
    /// `x + sigmoid(conv3x3(x)) * x`, gating every pixel.
    #[default]
    #[serde(rename = "spatial_eq4")]
    Spatial,
    /// `x + sigmoid(conv1x1(gap(conv3x3(x)))) * x`, gating whole channels.
    #[serde(rename = "channel_se")]
    Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSpec {
    pub n_rca_blocks: usize,
    pub channels: usize,
    pub attention_mode: AttentionMode,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec {
            n_rca_blocks: 16,
            channels: 16,
            attention_mode: AttentionMode::Spatial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrSpec {
    pub n_res_blocks: usize,
    pub channels: usize,
    pub scale: usize,
}

impl Default for SrSpec {
    fn default() -> Self {
        SrSpec {
            n_res_blocks: 4,
            channels: 16,
            scale: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub n_layers: usize,
    pub base_channels: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            n_layers: 4,
            base_channels: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub denoiser: DenoiserSpec,
    pub sr: SrSpec,
    pub discriminator: DiscriminatorSpec,
}

impl ModelSpec {
    pub fn with_scale(scale: usize) -> Self {
        let mut s = Self::default();
        s.sr.scale = scale;
        s
    }

    /// Small networks for gradient checks.
    pub fn tiny(scale: usize, attention_mode: AttentionMode) -> Self {
        ModelSpec {
            denoiser: DenoiserSpec {
                n_rca_blocks: 2,
                channels: 4,
                attention_mode,
            },
            sr: SrSpec {
                n_res_blocks: 2,
                channels: 4,
                scale,
            },
            discriminator: DiscriminatorSpec {
                n_layers: 2,
                base_channels: 4,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.denoiser.n_rca_blocks > 0, "n_rca_blocks must be positive");
        ensure_arg!(self.denoiser.channels > 0, "denoiser channels must be positive");
        ensure_arg!(self.sr.n_res_blocks > 0, "n_res_blocks must be positive");
        ensure_arg!(self.sr.channels > 0, "sr channels must be positive");
        ensure_arg!(matches!(self.sr.scale, 2 | 4), "scale must be 2 or 4, got {}", self.sr.scale);
        ensure_arg!(self.discriminator.n_layers > 0, "discriminator n_layers must be positive");
        ensure_arg!(self.discriminator.base_channels > 0, "discriminator base_channels must be positive");
        Ok(())
    }

    /// Closed-form parameter counts `(denoiser, sr, discriminator)`.
    pub fn param_counts(&self) -> (usize, usize, usize) {
        let c = self.denoiser.channels;
        let block = match self.denoiser.attention_mode {
            AttentionMode::Spatial => 9 * c * c + c,
            AttentionMode::Channel => 9 * c * c + c + c * c + c,
        };
        let denoiser = (9 * c + c) + self.denoiser.n_rca_blocks * block + (9 * c + 1);

        let c = self.sr.channels;
        let stages = upsample_stages(self.sr.scale);
        let sr = (9 * c + c) + self.sr.n_res_blocks * 2 * (9 * c * c + c) + stages * (36 * c * c + 4 * c) + (9 * c + 1);

        let d = &self.discriminator;
        let mut disc = 0;
        let mut cin = 1;
        for i in 0..d.n_layers {
            let cout = d.base_channels << i;
            disc += 9 * cin * cout + cout;
            cin = cout;
        }
        disc += cin + 1;
        (denoiser, sr, disc)
    }
}

fn upsample_stages(scale: usize) -> usize {
    scale.trailing_zeros() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    FanIn(usize),
    Zero,
}

type Layout = Vec<(String, Shape, Init)>;

fn conv(layout: &mut Layout, name: &str, cout: usize, cin: usize, k: usize, zero: bool) {
    let init = if zero { Init::Zero } else { Init::FanIn(cin * k * k) };
    layout.push((format!("{name}.w"), Shape::new(cout, cin, k, k), init));
    layout.push((format!("{name}.b"), Shape::new(1, cout, 1, 1), Init::Zero));
}

fn denoiser_layout(s: &DenoiserSpec) -> Layout {
    let c = s.channels;
    let mut l = Vec::new();
    conv(&mut l, "head", c, 1, 3, false);
    for i in 0..s.n_rca_blocks {
        match s.attention_mode {
            AttentionMode::Spatial => conv(&mut l, &format!("rca{i}.gate"), c, c, 3, true),
            AttentionMode::Channel => {
                conv(&mut l, &format!("rca{i}.conv"), c, c, 3, false);
                conv(&mut l, &format!("rca{i}.gate"), c, c, 1, true);
            }
        }
    }
    conv(&mut l, "tail", 1, c, 3, true);
    l
}

fn sr_layout(s: &SrSpec) -> Layout {
    let c = s.channels;
    let mut l = Vec::new();
    conv(&mut l, "head", c, 1, 3, false);
    for i in 0..s.n_res_blocks {
        conv(&mut l, &format!("res{i}.conv1"), c, c, 3, false);
        conv(&mut l, &format!("res{i}.conv2"), c, c, 3, true);
    }
    for i in 0..upsample_stages(s.scale) {
        conv(&mut l, &format!("up{i}"), 4 * c, c, 3, false);
    }
    conv(&mut l, "tail", 1, c, 3, true);
    l
}

fn discriminator_layout(s: &DiscriminatorSpec) -> Layout {
    let mut l = Vec::new();
    let mut cin = 1;
    for i in 0..s.n_layers {
        let cout = s.base_channels << i;
        conv(&mut l, &format!("conv{i}"), cout, cin, 3, false);
        cin = cout;
    }
    conv(&mut l, "linear", 1, cin, 1, true);
    l
}

fn build_store<T: Scalar>(layout: &Layout, seed: u64, mut value: impl FnMut(Init, &mut rng::ChaCha8Rng) -> f64) -> ParamStore<T> {
    let mut r = rng::stream(seed, rng::STREAM_PARAMS);
    let mut store = ParamStore::new();
    for (name, shape, init) in layout {
        let data = (0..shape.numel()).map(|_| T::of(value(*init, &mut r))).collect();
        store
            .push(name.clone(), Tensor::from_vec(*shape, data).expect("layout shape"))
            .expect("layout names are unique");
    }
    store
}

fn fan_in_init(init: Init, r: &mut rng::ChaCha8Rng) -> f64 {
    match init {
        Init::FanIn(fan_in) => {
            let bound = (6.0 / fan_in as f64).sqrt();
            r.random_range(-bound..bound)
        }
        Init::Zero => 0.0,
    }
}

fn check_layout<T: Scalar>(store: &ParamStore<T>, layout: &Layout, what: &str) -> Result<()> {
    let got = store.layout();
    let ok = got.len() == layout.len() && got.iter().zip(layout).all(|((n, s), (m, t, _))| n == m && s == t);
    if ok {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("{what} parameters do not match the model spec")))
    }
}

pub const GROUP_DENOISER: &str = "denoiser";
pub const GROUP_SR: &str = "sr";
pub const GROUP_DISCRIMINATOR: &str = "discriminator";

/// Parameters of all three networks, one store per group.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub spec: ModelSpec,
    pub denoiser: ParamStore<T>,
    pub sr: ParamStore<T>,
    pub discriminator: ParamStore<T>,
}

impl<T: Scalar> ModelState<T> {
    /// Fan-in uniform weights, zero biases, zero tail/gating/residual-final layers.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(ModelState {
            spec: spec.clone(),
            denoiser: build_store(&denoiser_layout(&spec.denoiser), rng::substream_seed(seed, 0), fan_in_init),
            sr: build_store(&sr_layout(&spec.sr), rng::substream_seed(seed, 1), fan_in_init),
            discriminator: build_store(
                &discriminator_layout(&spec.discriminator),
                rng::substream_seed(seed, 2),
                fan_in_init,
            ),
        })
    }

    /// Every parameter (including zero-init layers) drawn uniformly from
    /// `±amplitude * sqrt(6 / fan_in)`; biases from `±amplitude`. Used for
    /// gradient checks, where zero layers would hide most of the backward pass.
    pub fn randomized(spec: &ModelSpec, seed: u64, amplitude: f64) -> Result<Self> {
        spec.validate()?;
        let fill = move |init: Init, r: &mut rng::ChaCha8Rng| match init {
            Init::FanIn(f) => amplitude * r.random_range(-1.0..1.0) * (6.0 / f as f64).sqrt(),
            Init::Zero => amplitude * r.random_range(-1.0..1.0),
        };
        Ok(ModelState {
            spec: spec.clone(),
            denoiser: build_store(&denoiser_layout(&spec.denoiser), rng::substream_seed(seed, 0), fill),
            sr: build_store(&sr_layout(&spec.sr), rng::substream_seed(seed, 1), fill),
            discriminator: build_store(
                &discriminator_layout(&spec.discriminator),
                rng::substream_seed(seed, 2),
                fill,
            ),
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            spec: self.spec.clone(),
            denoiser: self.denoiser.cast(),
            sr: self.sr.cast(),
            discriminator: self.discriminator.cast(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.denoiser.all_finite() && self.sr.all_finite() && self.discriminator.all_finite()
    }

    /// Replaces the denoiser with a freshly initialized (identity) one.
    pub fn with_identity_denoiser(mut self) -> Self {
        self.denoiser = build_store(&denoiser_layout(&self.spec.denoiser), 0, fan_in_init);
        self
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint<T>> {
        Ok(Checkpoint {
            meta: serde_json::json!({ "model_spec": self.spec, "extra": extra }),
            groups: vec![
                (GROUP_DENOISER.into(), self.denoiser.clone()),
                (GROUP_SR.into(), self.sr.clone()),
                (GROUP_DISCRIMINATOR.into(), self.discriminator.clone()),
            ],
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        let spec_json = ck
            .meta
            .get("model_spec")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("header has no model_spec".into()))?;
        let spec: ModelSpec = serde_json::from_value(spec_json)?;
        spec.validate()?;
        let group = |name: &str| {
            ck.group(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter group {name}")))
        };
        let state = ModelState {
            denoiser: group(GROUP_DENOISER)?,
            sr: group(GROUP_SR)?,
            discriminator: group(GROUP_DISCRIMINATOR)?,
            spec,
        };
        check_layout(&state.denoiser, &denoiser_layout(&state.spec.denoiser), GROUP_DENOISER)?;
        check_layout(&state.sr, &sr_layout(&state.spec.sr), GROUP_SR)?;
        check_layout(
            &state.discriminator,
            &discriminator_layout(&state.spec.discriminator),
            GROUP_DISCRIMINATOR,
        )?;
        Ok(state)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.to_checkpoint(extra)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    /// `sr(denoiser(y))` on one single-channel image, clamped to `[0, 1]`.
    pub fn restore(&self, y: &Image) -> Result<Image> {
        self.infer(y, true, true)
    }

    pub fn denoise(&self, y: &Image) -> Result<Image> {
        self.infer(y, true, false)
    }

    pub fn super_resolve(&self, y: &Image) -> Result<Image> {
        self.infer(y, false, true)
    }

    fn infer(&self, y: &Image, denoise: bool, upscale: bool) -> Result<Image> {
        ensure_arg!(y.channels() == 1, "networks take single-channel images");
        let mut g = Graph::<T>::new();
        let mut h = g.input(&Tensor::from_image(y));
        if denoise {
            let p = g.bind_frozen(&self.denoiser);
            h = denoiser_forward(&mut g, &self.spec.denoiser, &p, h)?;
        }
        if upscale {
            let p = g.bind_frozen(&self.sr);
            h = sr_forward(&mut g, &self.spec.sr, &p, h)?;
        }
        Ok(g.tensor(h).to_images()?.remove(0))
    }
}

/// Hands out bound parameters in layout order.
struct Params<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl<'a> Params<'a> {
    fn new(vars: &'a [Var], expected: usize, what: &str) -> Result<Self> {
        ensure_arg!(
            vars.len() == expected,
            "{what} expects {expected} parameter tensors, got {}",
            vars.len()
        );
        Ok(Params { vars, pos: 0 })
    }

    fn conv(&mut self) -> (Var, Var) {
        let w = self.vars[self.pos];
        let b = self.vars[self.pos + 1];
        self.pos += 2;
        (w, b)
    }
}

fn conv3<T: Scalar>(g: &mut Graph<T>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    g.conv2d(x, w, Some(b), 1, 1)
}

/// One residual attention block; `p` holds its parameters in layout order.
pub fn rca_block<T: Scalar>(g: &mut Graph<T>, mode: AttentionMode, p: &[Var], x: Var) -> Result<Var> {
    let gate = match mode {
        AttentionMode::Spatial => {
            ensure_arg!(p.len() == 2, "spatial attention block takes 2 tensors");
            let z = conv3(g, x, (p[0], p[1]))?;
            g.sigmoid(z)
        }
        AttentionMode::Channel => {
            ensure_arg!(p.len() == 4, "channel attention block takes 4 tensors");
            let f = conv3(g, x, (p[0], p[1]))?;
            let s = g.global_avg_pool(f);
            let z = g.conv2d(s, p[2], Some(p[3]), 1, 0)?;
            g.sigmoid(z)
        }
    };
    let gated = g.mul(x, gate)?;
    g.add(x, gated)
}

pub fn denoiser_forward<T: Scalar>(g: &mut Graph<T>, spec: &DenoiserSpec, params: &[Var], y: Var) -> Result<Var> {
    let layout = denoiser_layout(spec);
    let mut p = Params::new(params, layout.len(), "denoiser")?;
    ensure_arg!(g.shape(y).c == 1, "denoiser takes single-channel input, got {}", g.shape(y));
    let mut h = conv3(g, y, p.conv())?;
    let per_block = match spec.attention_mode {
        AttentionMode::Spatial => 2,
        AttentionMode::Channel => 4,
    };
    for _ in 0..spec.n_rca_blocks {
        h = rca_block(g, spec.attention_mode, &p.vars[p.pos..p.pos + per_block], h)?;
        p.pos += per_block;
    }
    let r = conv3(g, h, p.conv())?;
    g.add(y, r)
}

pub fn sr_forward<T: Scalar>(g: &mut Graph<T>, spec: &SrSpec, params: &[Var], x: Var) -> Result<Var> {
    let layout = sr_layout(spec);
    let mut p = Params::new(params, layout.len(), "sr")?;
    let s = g.shape(x);
    ensure_arg!(s.c == 1, "sr net takes single-channel input, got {s}");
    ensure_arg!(matches!(spec.scale, 2 | 4), "scale must be 2 or 4");
    let mut h = conv3(g, x, p.conv())?;
    for _ in 0..spec.n_res_blocks {
        let a = conv3(g, h, p.conv())?;
        let a = g.relu(a);
        let r = conv3(g, a, p.conv())?;
        h = g.add(h, r)?;
    }
    for _ in 0..upsample_stages(spec.scale) {
        let u = conv3(g, h, p.conv())?;
        let u = g.pixel_shuffle(u, 2)?;
        h = g.relu(u);
    }
    let r = conv3(g, h, p.conv())?;
    let plan = Arc::new(ResizePlan::new(s.w, s.h, s.w * spec.scale, s.h * spec.scale)?);
    let skip = g.resize(x, plan)?;
    g.add(skip, r)
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// One logit per sample, shape `(N, 1, 1, 1)`.
pub fn discriminator_forward<T: Scalar>(
    g: &mut Graph<T>,
    spec: &DiscriminatorSpec,
    params: &[Var],
    img: Var,
) -> Result<Var> {
    let layout = discriminator_layout(spec);
    let mut p = Params::new(params, layout.len(), "discriminator")?;
    let s = g.shape(img);
    ensure_arg!(s.c == 1, "discriminator takes single-channel input, got {s}");
    ensure_arg!(s.h >= 16 && s.w >= 16, "discriminator needs H, W >= 16, got {s}");
    let mut h = img;
    for _ in 0..spec.n_layers {
        let (w, b) = p.conv();
        let c = g.conv2d(h, w, Some(b), 2, 1)?;
        h = g.leaky_relu(c, LEAKY_SLOPE);
    }
    let pooled = g.global_avg_pool(h);
    let (w, b) = p.conv();
    g.conv2d(pooled, w, Some(b), 1, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanValue {
    /// `mean[bce(d_real, 1) + bce(d_fake, 0)]`.
    pub d_loss: f64,
    /// Non-saturating generator loss `mean[bce(d_fake, 1)]`.
    pub g_loss: f64,
    /// The minimax form `mean[ln(1 - sigmoid(d_fake))]`.
    pub g_loss_minimax: f64,
}

pub fn gan_value(d_real: &[f64], d_fake: &[f64]) -> Result<GanValue> {
    ensure_arg!(
        !d_real.is_empty() && d_real.len() == d_fake.len(),
        "gan_value needs equal, non-empty batches"
    );
    let n = d_real.len() as f64;
    let mean = |f: &dyn Fn(f64) -> f64, v: &[f64]| v.iter().map(|&z| f(z)).sum::<f64>() / n;
    Ok(GanValue {
        d_loss: mean(&|z| bce_term(z, 1.0), d_real) + mean(&|z| bce_term(z, 0.0), d_fake),
        g_loss: mean(&|z| bce_term(z, 1.0), d_fake),
        g_loss_minimax: -mean(&|z| bce_term(z, 0.0), d_fake),
    })
}

/// Discriminator loss on the graph.
pub fn d_loss<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let n = g.shape(real).numel();
    ensure_arg!(g.shape(fake).numel() == n, "gan batches differ");
    let lr = g.bce_with_logits(real, &vec![T::one(); n])?;
    let lf = g.bce_with_logits(fake, &vec![T::zero(); n])?;
    g.add(lr, lf)
}

/// Non-saturating generator loss on the graph.
pub fn g_loss<T: Scalar>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    let n = g.shape(fake).numel();
    g.bce_with_logits(fake, &vec![T::one(); n])
}

/// Gradient checks of whole networks (tiny specs, randomized parameters),
/// differentiating with respect to the input and every parameter.
pub fn network_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    let input = |shape: Shape, k: u64| random_tensor(shape, 0.0, 1.0, cfg.seed ^ k).with_grad();
    let with_params = |x: Tensor<f64>, store: &ParamStore<f64>| {
        let mut v = vec![x];
        v.extend(store.iter().map(|p| p.tensor.clone()));
        v
    };
    for (mode, label) in [(AttentionMode::Spatial, "spatial_eq4"), (AttentionMode::Channel, "channel_se")] {
        let spec = ModelSpec::tiny(2, mode);
        let state = ModelState::<f64>::randomized(&spec, cfg.seed ^ 0x51, 0.5)?;
        let ds = spec.denoiser.clone();
        let per_block = if mode == AttentionMode::Spatial { 2 } else { 4 };
        let block_params: Vec<Tensor<f64>> = state.denoiser.iter().skip(2).take(per_block).map(|p| p.tensor.clone()).collect();
        let mut inputs = vec![input(Shape::new(2, 4, 5, 5), 1)];
        inputs.extend(block_params);
        reports.push(grad_check(&format!("rca_block {label}"), &inputs, cfg, move |g, v| {
            rca_block(g, mode, &v[1..], v[0])
        })?);
        reports.push(grad_check(
            &format!("denoiser {label}"),
            &with_params(input(Shape::new(1, 1, 8, 8), 2), &state.denoiser),
            cfg,
            move |g, v| denoiser_forward(g, &ds, &v[1..], v[0]),
        )?);
    }
    for scale in [2, 4] {
        let spec = ModelSpec::tiny(scale, AttentionMode::Spatial);
        let state = ModelState::<f64>::randomized(&spec, cfg.seed ^ 0x52, 1.0)?;
        let ss = spec.sr.clone();
        reports.push(grad_check(
            &format!("sr x{scale}"),
            &with_params(input(Shape::new(1, 1, 6, 5), 3), &state.sr),
            cfg,
            move |g, v| sr_forward(g, &ss, &v[1..], v[0]),
        )?);
    }
    let spec = ModelSpec::tiny(2, AttentionMode::Spatial);
    let state = ModelState::<f64>::randomized(&spec, cfg.seed ^ 0x53, 1.0)?;
    let dspec = spec.discriminator.clone();
    reports.push(grad_check(
        "discriminator",
        &with_params(input(Shape::new(2, 1, 16, 17), 4), &state.discriminator),
        cfg,
        move |g, v| discriminator_forward(g, &dspec, &v[1..], v[0]),
    )?);
    let dspec = spec.discriminator.clone();
    let mut inputs = with_params(input(Shape::new(2, 1, 16, 16), 5), &state.discriminator);
    inputs.insert(1, input(Shape::new(2, 1, 16, 16), 6));
    reports.push(grad_check("gan losses", &inputs, cfg, move |g, v| {
        let real = discriminator_forward(g, &dspec, &v[2..], v[0])?;
        let fake = discriminator_forward(g, &dspec, &v[2..], v[1])?;
        let d = d_loss(g, real, fake)?;
        let gl = g_loss(g, fake)?;
        g.add(d, gl)
    })?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::bicubic_resize;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| ((x * 7 + y * 3) % 17) as f64 / 16.0).unwrap()
    }

    #[test]
    fn spec_json_uses_documented_names() {
        let spec = ModelSpec::default();
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["denoiser"]["attention_mode"], "spatial_eq4");
        assert_eq!(json["denoiser"]["n_rca_blocks"], 16);
        assert_eq!(json["sr"]["n_res_blocks"], 4);
        assert_eq!(json["discriminator"]["base_channels"], 16);
        let se: ModelSpec = serde_json::from_str(r#"{"denoiser": {"attention_mode": "channel_se"}}"#).unwrap();
        assert_eq!(se.denoiser.attention_mode, AttentionMode::Channel);
        assert!(serde_json::from_str::<ModelSpec>(r#"{"sr": {"scael": 2}}"#).is_err());
        assert!(ModelSpec::with_scale(3).validate().is_err());
    }

    #[test]
    fn parameter_counts_match_layout() {
        for spec in [
            ModelSpec::default(),
            ModelSpec::with_scale(2),
            ModelSpec::tiny(4, AttentionMode::Channel),
            ModelSpec::tiny(2, AttentionMode::Spatial),
        ] {
            let state = ModelState::<f64>::init(&spec, 1).unwrap();
            let counts = spec.param_counts();
            assert_eq!(counts, (state.denoiser.numel(), state.sr.numel(), state.discriminator.numel()));
        }
        // head 160 + 16 blocks * 2320 + tail 145
        assert_eq!(ModelSpec::default().param_counts().0, 160 + 16 * 2320 + 145);
    }

    #[test]
    fn zero_gate_scales_input_by_one_and_a_half() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&Tensor::from_vec(Shape::new(1, 2, 3, 3), (0..18).map(|v| v as f64 / 10.0).collect()).unwrap());
        let w = g.input(&Tensor::zeros(Shape::new(2, 2, 3, 3)));
        let b = g.input(&Tensor::zeros(Shape::new(1, 2, 1, 1)));
        let y = rca_block(&mut g, AttentionMode::Spatial, &[w, b], x).unwrap();
        for (a, b) in g.value(y).iter().zip(g.value(x)) {
            assert_eq!(*a, 1.5 * b);
        }
    }

    #[test]
    fn zero_input_stays_zero_in_both_modes() {
        for mode in [AttentionMode::Spatial, AttentionMode::Channel] {
            let spec = ModelSpec::tiny(2, mode);
            let state = ModelState::<f64>::randomized(&spec, 3, 1.0).unwrap();
            let mut g = Graph::<f64>::new();
            let p = g.bind_frozen(&state.denoiser);
            let x = g.input(&Tensor::zeros(Shape::new(1, 4, 5, 5)));
            let per = if mode == AttentionMode::Spatial { 2 } else { 4 };
            let y = rca_block(&mut g, mode, &p[2..2 + per], x).unwrap();
            assert!(g.value(y).iter().all(|&v| v == 0.0));
            assert_eq!(g.shape(y), g.shape(x));
        }
    }

    #[test]
    fn channel_mismatch_is_an_argument_error() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&Tensor::zeros(Shape::new(1, 3, 5, 5)));
        let w = g.input(&Tensor::zeros(Shape::new(2, 2, 3, 3)));
        let b = g.input(&Tensor::zeros(Shape::new(1, 2, 1, 1)));
        assert!(rca_block(&mut g, AttentionMode::Spatial, &[w, b], x).is_err());
    }

    #[test]
    fn fresh_networks_are_identity_and_bicubic() {
        for mode in [AttentionMode::Spatial, AttentionMode::Channel] {
            for scale in [2, 4] {
                let mut spec = ModelSpec::with_scale(scale);
                spec.denoiser.attention_mode = mode;
                let state = ModelState::<f64>::init(&spec, 9).unwrap();
                let y = ramp(12, 10);
                assert_eq!(state.denoise(&y).unwrap(), y);
                let up = state.super_resolve(&y).unwrap();
                assert_eq!(up, bicubic_resize(&y, 12 * scale, 10 * scale).unwrap());
                assert_eq!(state.restore(&y).unwrap(), up);
            }
        }
    }

    #[test]
    fn sr_scale_four_maps_24_to_96() {
        let spec = ModelSpec::with_scale(4);
        let state = ModelState::<f64>::randomized(&spec, 2, 0.3).unwrap();
        let out = state.super_resolve(&ramp(24, 24)).unwrap();
        assert_eq!((out.width(), out.height()), (96, 96));
        let d = state.denoise(&ramp(8, 11)).unwrap();
        assert_eq!((d.width(), d.height()), (8, 11));
    }

    #[test]
    fn discriminator_output_and_size_check() {
        let spec = ModelSpec::default();
        let state = ModelState::<f64>::init(&spec, 4).unwrap();
        let mut g = Graph::<f64>::new();
        let p = g.bind_frozen(&state.discriminator);
        let x = g.input(&gradcheck_input(Shape::new(3, 1, 20, 17)));
        let z = discriminator_forward(&mut g, &spec.discriminator, &p, x).unwrap();
        assert_eq!(g.shape(z), Shape::new(3, 1, 1, 1));
        assert!(g.value(z).iter().all(|&v| v == 0.0));
        let small = g.input(&Tensor::zeros(Shape::new(1, 1, 15, 32)));
        assert!(discriminator_forward(&mut g, &spec.discriminator, &p, small).is_err());
    }

    fn gradcheck_input(shape: Shape) -> Tensor<f64> {
        crate::autodiff::gradcheck::random_tensor(shape, 0.0, 1.0, 5)
    }

    #[test]
    fn networks_pass_gradient_oracle() {
        for r in network_suite(&GradCheckConfig::default()).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn gan_closed_forms() {
        let v = gan_value(&[0.0; 4], &[0.0; 4]).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((v.d_loss - 2.0 * ln2).abs() < 1e-12);
        assert!((v.g_loss - ln2).abs() < 1e-12);
        assert!((v.g_loss_minimax + ln2).abs() < 1e-12);
        assert!(gan_value(&[1.0], &[]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_restores_spec_and_values() {
        let spec = ModelSpec::tiny(4, AttentionMode::Channel);
        let state = ModelState::<f64>::randomized(&spec, 8, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        state.save(&path, serde_json::json!({"step": 3})).unwrap();
        let back = ModelState::<f64>::load(&path).unwrap();
        assert_eq!(back, state);

        let mut wrong = state.to_checkpoint(serde_json::Value::Null).unwrap();
        wrong.meta["model_spec"]["sr"]["channels"] = 5.into();
        assert!(ModelState::from_checkpoint(wrong).is_err());
    }
}
