//! Central finite-difference gradient checker.
//!
//! The relative error at a coordinate is `|a - n| / max(|a|, |n|, floor)`
//! where `a` is the analytic and `n` the numeric derivative. The floor keeps
//! coordinates whose true derivative is zero from dividing roundoff by zero.
//! A coordinate is skipped when either perturbed evaluation takes a different
//! branch at a non-smooth point than the unperturbed one.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{Shape, Tensor};
use crate::degrade::ResizePlan;
use crate::error::{ensure_arg, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub passed: bool,
}

/// Checks `d f / d inputs` for every input tensor with `requires_grad`.
///
/// `f` builds the computation from leaves bound to `inputs` (in order). A
/// non-scalar result is projected to a scalar with fixed random weights.
pub fn grad_check<F>(name: &str, inputs: &[Tensor<f64>], cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    ensure_arg!(cfg.step > 0.0, "finite-difference step must be positive");
    let mut projection: Option<Vec<f64>> = None;
    let mut eval = |values: &[Tensor<f64>], backward: bool| -> Result<(f64, u64, Vec<Option<Vec<f64>>>)> {
        let mut g = Graph::with_kink_tracking();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t)).collect();
        let mut out = f(&mut g, &vars)?;
        if g.shape(out).numel() != 1 {
            let n = g.shape(out).numel();
            let w = projection.get_or_insert_with(|| {
                let mut r = rng::stream(cfg.seed, rng::STREAM_PARAMS);
                (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
            });
            ensure_arg!(w.len() == n, "output size changed between evaluations");
            out = g.weighted_sum(out, w.clone())?;
        }
        let kinks = g.kink_fingerprint().unwrap_or(0);
        let value = g.scalar(out);
        let grads = if backward {
            g.backward(out)?;
            vars.iter().map(|v| g.grad(*v).map(|s| s.to_vec())).collect()
        } else {
            Vec::new()
        };
        Ok((value, kinks, grads))
    };

    let (_, base_kinks, analytic) = eval(inputs, true)?;
    let mut pick = rng::stream(cfg.seed, rng::STREAM_NOISE);
    let mut work = inputs.to_vec();
    let (mut max_rel, mut checked, mut skipped) = (0.0f64, 0, 0);
    for (i, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let n = input.shape().numel();
        let zeros = vec![0.0; n];
        let grad = analytic[i].as_deref().unwrap_or(&zeros);
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => rand::seq::index::sample(&mut pick, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for j in coords {
            let x0 = input.data()[j];
            work[i].data_mut()[j] = x0 + cfg.step;
            let (plus, kp, _) = eval(&work, false)?;
            work[i].data_mut()[j] = x0 - cfg.step;
            let (minus, km, _) = eval(&work, false)?;
            work[i].data_mut()[j] = x0;
            if kp != base_kinks || km != base_kinks {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: max_rel,
        checked,
        skipped_kinks: skipped,
        passed: checked > 0 && max_rel < cfg.tolerance,
    })
}

/// Seeded uniform tensor in `[lo, hi)`.
pub fn random_tensor(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, rng::STREAM_PARAMS);
    let data = (0..shape.numel()).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// Gradient checks for every differentiable op at small random shapes.
pub fn op_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let s = cfg.seed;
    let p = |shape: Shape, k: u64| random_tensor(shape, -1.0, 1.0, s ^ k.wrapping_mul(0x9E37_79B9)).with_grad();
    let unit = |shape: Shape, k: u64| random_tensor(shape, 0.05, 0.95, s ^ k.wrapping_mul(0x85EB_CA6B)).with_grad();
    let x = Shape::new(1, 2, 5, 5);
    let mut reports = Vec::new();

    reports.push(grad_check(
        "conv2d 3x3",
        &[p(x, 1), p(Shape::new(3, 2, 3, 3), 2), p(Shape::new(1, 3, 1, 1), 3)],
        cfg,
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
    )?);
    reports.push(grad_check(
        "conv2d 3x3 stride 2",
        &[p(Shape::new(2, 2, 7, 6), 4), p(Shape::new(3, 2, 3, 3), 5)],
        cfg,
        |g, v| g.conv2d(v[0], v[1], None, 2, 1),
    )?);
    reports.push(grad_check(
        "conv2d 1x1",
        &[p(x, 6), p(Shape::new(4, 2, 1, 1), 7), p(Shape::new(1, 4, 1, 1), 8)],
        cfg,
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 0),
    )?);
    reports.push(grad_check("relu", &[p(x, 9)], cfg, |g, v| Ok(g.relu(v[0])))?);
    reports.push(grad_check("leaky_relu", &[p(x, 10)], cfg, |g, v| Ok(g.leaky_relu(v[0], 0.2)))?);
    reports.push(grad_check("sigmoid", &[p(x, 11)], cfg, |g, v| Ok(g.sigmoid(v[0])))?);
    reports.push(grad_check("add", &[p(x, 12), p(x, 13)], cfg, |g, v| g.add(v[0], v[1]))?);
    reports.push(grad_check("sub", &[p(x, 14), p(x, 15)], cfg, |g, v| g.sub(v[0], v[1]))?);
    reports.push(grad_check("mul", &[p(x, 16), p(x, 17)], cfg, |g, v| g.mul(v[0], v[1]))?);
    reports.push(grad_check(
        "mul broadcast",
        &[p(x, 18), p(Shape::new(1, 2, 1, 1), 19)],
        cfg,
        |g, v| g.mul(v[0], v[1]),
    )?);
    reports.push(grad_check("scale", &[p(x, 20)], cfg, |g, v| Ok(g.scale(v[0], -1.7)))?);
    reports.push(grad_check("global_avg_pool", &[p(x, 21)], cfg, |g, v| Ok(g.global_avg_pool(v[0])))?);
    reports.push(grad_check("pixel_shuffle", &[p(Shape::new(1, 8, 3, 2), 22)], cfg, |g, v| {
        g.pixel_shuffle(v[0], 2)
    })?);
    reports.push(grad_check("pixel_unshuffle", &[p(Shape::new(1, 2, 4, 6), 23)], cfg, |g, v| {
        g.pixel_unshuffle(v[0], 2)
    })?);
    let up = Arc::new(ResizePlan::new(5, 5, 10, 10)?);
    reports.push(grad_check("bicubic upsample", &[p(x, 24)], cfg, move |g, v| {
        g.resize(v[0], up.clone())
    })?);
    let down = Arc::new(ResizePlan::new(8, 8, 4, 4)?);
    reports.push(grad_check(
        "bicubic downsample",
        &[p(Shape::new(1, 2, 8, 8), 25)],
        cfg,
        move |g, v| g.resize(v[0], down.clone()),
    )?);
    reports.push(grad_check("mean", &[p(x, 26)], cfg, |g, v| Ok(g.mean(v[0])))?);
    reports.push(grad_check("l1_loss", &[p(x, 27), p(x, 28)], cfg, |g, v| g.l1_loss(v[0], v[1]))?);
    let ss = Shape::new(2, 1, 13, 12);
    reports.push(grad_check("ssim_loss", &[unit(ss, 29), unit(ss, 30)], cfg, |g, v| {
        g.ssim_loss(v[0], v[1])
    })?);
    let labels: Vec<f64> = (0..x.numel()).map(|i| (i % 3) as f64 / 2.0).collect();
    reports.push(grad_check("bce_with_logits", &[p(x, 31)], cfg, move |g, v| {
        let z = g.scale(v[0], 3.0);
        g.bce_with_logits(z, &labels)
    })?);
    Ok(reports)
}
