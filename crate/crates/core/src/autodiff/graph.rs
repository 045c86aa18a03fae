//! Dynamically recorded tape.
//!
//! Every op appends a node holding its output value and the inputs it needs
//! for its backward rule. Nodes are appended in evaluation order, so the tape
//! is already topologically sorted and [`Graph::backward`] walks it once in
//! reverse. A graph lives for one iteration and is then dropped.

use std::sync::Arc;

use super::conv::{self, ConvGeom};
use super::params::ParamStore;
use super::ssim_loss;
use super::tensor::{Shape, Tensor};
use super::Scalar;
use crate::degrade::ResizePlan;
use crate::error::{ensure_arg, Result};
use crate::metrics::SSIM_WINDOW;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Second operand may be `(N, C, 1, 1)`, broadcast over space.
    Mul(Var, Var),
    Scale(Var, T),
    GlobalAvgPool(Var),
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    Resize(Var, Arc<ResizePlan>),
    Reshape(Var),
    WeightedSum(Var, Vec<T>),
    Mean(Var),
    L1(Var, Var),
    SsimLoss(Var, Var),
    Bce(Var, Vec<T>),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Relu(a) | LeakyRelu(a, _) | Sigmoid(a) | Scale(a, _) | GlobalAvgPool(a) | PixelShuffle(a, _)
            | PixelUnshuffle(a, _) | Resize(a, _) | Reshape(a) | WeightedSum(a, _) | Mean(a) | Bce(a, _) => {
                vec![*a]
            }
            Add(a, b) | Sub(a, b) | Mul(a, b) | L1(a, b) | SsimLoss(a, b) => vec![*a, *b],
        }
    }
}

struct Node<T> {
    shape: Shape,
    value: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    kinks: Option<u64>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            kinks: None,
        }
    }

    /// A graph that fingerprints the branch taken at every non-smooth point
    /// (ReLU sign, L1 sign). Used by the gradient checker to detect
    /// finite-difference steps that cross a kink.
    pub fn with_kink_tracking() -> Self {
        Graph {
            nodes: Vec::new(),
            kinks: Some(0xCBF2_9CE4_8422_2325),
        }
    }

    pub fn kink_fingerprint(&self) -> Option<u64> {
        self.kinks
    }

    fn note_kinks(&mut self, bits: impl Iterator<Item = bool>) {
        if let Some(h) = &mut self.kinks {
            for b in bits {
                *h = (*h ^ b as u64).wrapping_mul(0x0100_0000_01B3);
            }
        }
    }

    fn push(&mut self, shape: Shape, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(shape.numel(), value.len());
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf holding a copy of `t`; it receives gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.leaf_with(t.shape(), t.data().to_vec(), t.requires_grad())
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.leaf_with(t.shape(), t.data().to_vec(), false)
    }

    /// Differentiable leaf regardless of the tensor's flag.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.leaf_with(t.shape(), t.data().to_vec(), true)
    }

    pub fn leaf_with(&mut self, shape: Shape, value: Vec<T>, requires_grad: bool) -> Var {
        assert_eq!(shape.numel(), value.len(), "leaf value does not match shape");
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaves for every parameter of `store`, in store order.
    pub fn bind(&mut self, store: &ParamStore<T>) -> Vec<Var> {
        store.iter().map(|p| self.param(&p.tensor)).collect()
    }

    /// Constant leaves for every parameter of `store`.
    pub fn bind_frozen(&mut self, store: &ParamStore<T>) -> Vec<Var> {
        store.iter().map(|p| self.input(&p.tensor)).collect()
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::from_vec(n.shape, n.value.clone()).expect("node shape")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- ops -------------------------------------------------------------

    /// 2-D cross-correlation with zero padding. `w` is `(Cout, Cin, k, k)`, `b` is `(1, Cout, 1, 1)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        ensure_arg!(ws.h == ws.w && ws.h % 2 == 1, "conv kernel must be square and odd, got {ws}");
        ensure_arg!(ws.c == xs.c, "conv expects {} input channels, got {}", ws.c, xs.c);
        ensure_arg!(stride >= 1, "stride must be >= 1");
        if let Some(b) = b {
            ensure_arg!(self.shape(b).numel() == ws.n, "bias must have {} elements", ws.n);
        }
        let k = ws.h;
        ensure_arg!(
            xs.h + 2 * pad >= k && xs.w + 2 * pad >= k,
            "input {xs} smaller than kernel {k}"
        );
        let geom = ConvGeom {
            n: xs.n,
            cin: xs.c,
            cout: ws.n,
            k,
            stride,
            pad,
            h: xs.h,
            w: xs.w,
            oh: (xs.h + 2 * pad - k) / stride + 1,
            ow: (xs.w + 2 * pad - k) / stride + 1,
        };
        let value = conv::forward(
            &geom,
            self.value(x),
            self.value(w),
            b.map(|b| self.nodes[b.0].value.as_slice()),
        );
        let shape = Shape::new(xs.n, ws.n, geom.oh, geom.ow);
        Ok(self.push(shape, value, Op::Conv2d { x, w, b, geom }))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(self.shape(x), value, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        if self.kinks.is_some() {
            let bits: Vec<bool> = self.value(x).iter().map(|&v| v > T::zero()).collect();
            self.note_kinks(bits.into_iter());
        }
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        if self.kinks.is_some() {
            let bits: Vec<bool> = self.value(x).iter().map(|&v| v > T::zero()).collect();
            self.note_kinks(bits.into_iter());
        }
        let s = T::of(slope);
        self.unary(x, move |v| if v > T::zero() { v } else { s * v }, Op::LeakyRelu(x, s))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::of(factor);
        self.unary(x, move |v| v * f, Op::Scale(x, f))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        ensure_arg!(sa == sb, "{what}: shape mismatch {sa} vs {sb}");
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "add")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(shape, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "sub")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        Ok(self.push(shape, value, Op::Sub(a, b)))
    }

    /// Element-wise product; `b` may also be `(N, C, 1, 1)` to scale whole channels.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let value: Vec<T> = if sa == sb {
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect()
        } else {
            ensure_arg!(
                sb == Shape::new(sa.n, sa.c, 1, 1),
                "mul: cannot broadcast {sb} over {sa}"
            );
            let plane = sa.plane();
            let bv = self.value(b);
            self.value(a)
                .chunks_exact(plane)
                .zip(bv)
                .flat_map(|(chunk, &s)| chunk.iter().map(move |&x| x * s))
                .collect()
        };
        Ok(self.push(sa, value, Op::Mul(a, b)))
    }

    /// Per-channel spatial mean, `(N, C, H, W) -> (N, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let inv = T::of(1.0 / s.plane() as f64);
        let value = self
            .value(x)
            .chunks_exact(s.plane())
            .map(|c| c.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        self.push(Shape::new(s.n, s.c, 1, 1), value, Op::GlobalAvgPool(x))
    }

    /// Depth-to-space: `(N, C r^2, H, W) -> (N, C, rH, rW)`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x);
        ensure_arg!(r >= 1 && s.c % (r * r) == 0, "pixel_shuffle: {} channels not divisible by {}", s.c, r * r);
        let out = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
        let mut value = vec![T::zero(); s.numel()];
        let src = self.value(x);
        for_each_shuffle(s, r, |si, di| value[di] = src[si]);
        Ok(self.push(out, value, Op::PixelShuffle(x, r)))
    }

    /// Space-to-depth, the inverse of [`Graph::pixel_shuffle`].
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x);
        ensure_arg!(r >= 1 && s.h % r == 0 && s.w % r == 0, "pixel_unshuffle: {s} not divisible by {r}");
        let src_shape = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
        let mut value = vec![T::zero(); s.numel()];
        let src = self.value(x);
        for_each_shuffle(src_shape, r, |si, di| value[si] = src[di]);
        Ok(self.push(src_shape, value, Op::PixelUnshuffle(x, r)))
    }

    /// Resamples every plane with `plan` (linear, differentiable).
    pub fn resize(&mut self, x: Var, plan: Arc<ResizePlan>) -> Result<Var> {
        let s = self.shape(x);
        ensure_arg!(
            (s.w, s.h) == (plan.src_w, plan.src_h),
            "resize plan expects {}x{}, got {}x{}",
            plan.src_w,
            plan.src_h,
            s.w,
            s.h
        );
        let value: Vec<T> = self.value(x).chunks_exact(s.plane()).flat_map(|p| plan.apply(p)).collect();
        let out = Shape::new(s.n, s.c, plan.dst_h, plan.dst_w);
        Ok(self.push(out, value, Op::Resize(x, plan)))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        ensure_arg!(shape.numel() == self.shape(x).numel(), "reshape: {} to {shape}", self.shape(x));
        let value = self.value(x).to_vec();
        Ok(self.push(shape, value, Op::Reshape(x)))
    }

    /// `sum_i weights[i] * x[i]`, a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        ensure_arg!(weights.len() == self.shape(x).numel(), "weighted_sum: weight count mismatch");
        let v = self.value(x).iter().zip(&weights).fold(T::zero(), |a, (&x, &w)| a + x * w);
        Ok(self.push(Shape::scalar(), vec![v], Op::WeightedSum(x, weights)))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of(self.shape(x).numel() as f64);
        let v = self.value(x).iter().fold(T::zero(), |a, &x| a + x) / n;
        self.push(Shape::scalar(), vec![v], Op::Mean(x))
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let shape = self.same_shape(pred, target, "l1_loss")?;
        if self.kinks.is_some() {
            let bits: Vec<bool> = self
                .value(pred)
                .iter()
                .zip(self.value(target))
                .map(|(&a, &b)| a > b)
                .collect();
            self.note_kinks(bits.into_iter());
        }
        let sum = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
        let v = sum / T::of(shape.numel() as f64);
        Ok(self.push(Shape::scalar(), vec![v], Op::L1(pred, target)))
    }

    /// `1 - SSIM` with uniform 11x11 windows, averaged over all planes and window positions.
    pub fn ssim_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let s = self.same_shape(pred, target, "ssim_loss")?;
        ensure_arg!(
            s.h >= SSIM_WINDOW && s.w >= SSIM_WINDOW,
            "ssim_loss needs H, W >= {SSIM_WINDOW}, got {s}"
        );
        let a = as_f64(self.value(pred));
        let b = as_f64(self.value(target));
        let plane = s.plane();
        let (mut total, mut count) = (0.0, 0);
        for p in 0..s.n * s.c {
            let (sum, n) = ssim_loss::plane_sum(&a[p * plane..(p + 1) * plane], &b[p * plane..(p + 1) * plane], s.h, s.w);
            total += sum;
            count += n;
        }
        let v = T::of(1.0 - total / count as f64);
        Ok(self.push(Shape::scalar(), vec![v], Op::SsimLoss(pred, target)))
    }

    /// Mean binary cross-entropy of `logits` against constant `labels`,
    /// computed as `max(z, 0) - z t + ln(1 + e^-|z|)`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let n = self.shape(logits).numel();
        ensure_arg!(labels.len() == n, "bce: {} labels for {n} logits", labels.len());
        let sum = self
            .value(logits)
            .iter()
            .zip(labels)
            .fold(T::zero(), |acc, (&z, &t)| acc + bce_term(z, t));
        let v = sum / T::of(n as f64);
        Ok(self.push(Shape::scalar(), vec![v], Op::Bce(logits, labels.to_vec())))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse pass from a scalar `loss`; afterwards [`Graph::grad`] holds
    /// `d loss / d v` for every differentiable node reached.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        ensure_arg!(
            self.shape(loss).numel() == 1,
            "backward needs a scalar loss, got {}",
            self.shape(loss)
        );
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            if !matches!(self.nodes[i].op, Op::Leaf) {
                for (v, contrib) in self.input_grads(i, &g)? {
                    let node = &mut self.nodes[v.0];
                    match &mut node.grad {
                        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a = *a + c),
                        None => node.grad = Some(contrib),
                    }
                }
            }
            // interior gradients are dropped once propagated; leaves keep theirs
            if matches!(self.nodes[i].op, Op::Leaf) || i == loss.0 {
                self.nodes[i].grad = Some(g);
            }
        }
        Ok(())
    }

    /// Adds the gradients of `vars` (from [`Graph::bind`]) into the store's accumulators.
    pub fn accumulate_grads(&self, vars: &[Var], store: &mut ParamStore<T>) -> Result<()> {
        ensure_arg!(vars.len() == store.len(), "binding does not match parameter store");
        for (v, p) in vars.iter().zip(store.iter_mut()) {
            match self.grad(*v) {
                Some(g) => p.tensor.accumulate_grad(g),
                None => p.tensor.accumulate_grad(&vec![T::zero(); p.tensor.shape().numel()]),
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, i: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let mut dw = vec![T::zero(); self.nodes[w.0].value.len()];
                let mut db = b.map(|_| vec![T::zero(); geom.cout]);
                let mut dx = self.needs(*x).then(|| vec![T::zero(); self.nodes[x.0].value.len()]);
                conv::backward(
                    geom,
                    self.value(*x),
                    self.value(*w),
                    g,
                    dx.as_deref_mut(),
                    &mut dw,
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if self.needs(*w) {
                    out.push((*w, dw));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    if self.needs(*b) {
                        out.push((*b, db));
                    }
                }
            }
            Op::Relu(x) => {
                let d = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((*x, d));
            }
            Op::LeakyRelu(x, s) => {
                let d = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| if v > T::zero() { g } else { *s * g })
                    .collect();
                out.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let d = node.value.iter().zip(g).map(|(&y, &g)| g * y * (T::one() - y)).collect();
                out.push((*x, d));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        out.push((v, g.to_vec()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().map(|&v| -v).collect()));
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (av, bv) = (self.value(*a), self.value(*b));
                if sa == sb {
                    if self.needs(*a) {
                        out.push((*a, g.iter().zip(bv).map(|(&g, &y)| g * y).collect()));
                    }
                    if self.needs(*b) {
                        out.push((*b, g.iter().zip(av).map(|(&g, &x)| g * x).collect()));
                    }
                } else {
                    let plane = sa.plane();
                    if self.needs(*a) {
                        let d = g
                            .chunks_exact(plane)
                            .zip(bv)
                            .flat_map(|(gc, &s)| gc.iter().map(move |&g| g * s))
                            .collect();
                        out.push((*a, d));
                    }
                    if self.needs(*b) {
                        let d = g
                            .chunks_exact(plane)
                            .zip(av.chunks_exact(plane))
                            .map(|(gc, ac)| gc.iter().zip(ac).fold(T::zero(), |acc, (&g, &x)| acc + g * x))
                            .collect();
                        out.push((*b, d));
                    }
                }
            }
            Op::Scale(x, f) => out.push((*x, g.iter().map(|&v| v * *f).collect())),
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let inv = T::of(1.0 / s.plane() as f64);
                let d = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, s.plane()))
                    .collect();
                out.push((*x, d));
            }
            Op::PixelShuffle(x, r) => {
                let mut d = vec![T::zero(); g.len()];
                for_each_shuffle(self.shape(*x), *r, |si, di| d[si] = g[di]);
                out.push((*x, d));
            }
            Op::PixelUnshuffle(x, r) => {
                let mut d = vec![T::zero(); g.len()];
                for_each_shuffle(node.shape, *r, |si, di| d[di] = g[si]);
                out.push((*x, d));
            }
            Op::Resize(x, plan) => {
                let s = self.shape(*x);
                let mut d = vec![T::zero(); s.numel()];
                let out_plane = plan.dst_w * plan.dst_h;
                for (gp, dp) in g.chunks_exact(out_plane).zip(d.chunks_exact_mut(s.plane())) {
                    plan.apply_adjoint(gp, dp);
                }
                out.push((*x, d));
            }
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::WeightedSum(x, w) => out.push((*x, w.iter().map(|&w| w * g[0]).collect())),
            Op::Mean(x) => {
                let n = self.shape(*x).numel();
                out.push((*x, vec![g[0] / T::of(n as f64); n]));
            }
            Op::L1(a, b) => {
                let n = T::of(self.shape(*a).numel() as f64);
                let sign: Vec<T> = self
                    .value(*a)
                    .iter()
                    .zip(self.value(*b))
                    .map(|(&x, &y)| {
                        if x > y {
                            g[0] / n
                        } else if x < y {
                            -g[0] / n
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.needs(*b) {
                    out.push((*b, sign.iter().map(|&v| -v).collect()));
                }
                if self.needs(*a) {
                    out.push((*a, sign));
                }
            }
            Op::SsimLoss(a, b) => {
                let s = self.shape(*a);
                let av = as_f64(self.value(*a));
                let bv = as_f64(self.value(*b));
                let plane = s.plane();
                let windows = (s.h - SSIM_WINDOW + 1) * (s.w - SSIM_WINDOW + 1) * s.n * s.c;
                let scale = -g[0].as_f64() / windows as f64;
                let mut ga = self.needs(*a).then(|| vec![0.0; s.numel()]);
                let mut gb = self.needs(*b).then(|| vec![0.0; s.numel()]);
                for p in 0..s.n * s.c {
                    let r = p * plane..(p + 1) * plane;
                    ssim_loss::plane_grad(
                        &av[r.clone()],
                        &bv[r.clone()],
                        s.h,
                        s.w,
                        scale,
                        ga.as_mut().map(|v| &mut v[r.clone()]),
                        gb.as_mut().map(|v| &mut v[r.clone()]),
                    );
                }
                if let Some(ga) = ga {
                    out.push((*a, ga.into_iter().map(T::of).collect()));
                }
                if let Some(gb) = gb {
                    out.push((*b, gb.into_iter().map(T::of).collect()));
                }
            }
            Op::Bce(z, labels) => {
                let n = T::of(labels.len() as f64);
                let d = self
                    .value(*z)
                    .iter()
                    .zip(labels)
                    .map(|(&z, &t)| (sigmoid(z) - t) * g[0] / n)
                    .collect();
                out.push((*z, d));
            }
        }
        Ok(out.into_iter().filter(|(v, _)| self.needs(*v)).collect())
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `-[t ln s(z) + (1-t) ln(1 - s(z))]`.
pub fn bce_term<T: Scalar>(z: T, t: T) -> T {
    z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p()
}

fn as_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Calls `f(src_index, dst_index)` for every element of a depth-to-space
/// rearrangement of a tensor with (pre-shuffle) shape `s`.
fn for_each_shuffle(s: Shape, r: usize, mut f: impl FnMut(usize, usize)) {
    let oc = s.c / (r * r);
    let (oh, ow) = (s.h * r, s.w * r);
    for n in 0..s.n {
        for c in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let sc = c * r * r + i * r + j;
                    for y in 0..s.h {
                        for x in 0..s.w {
                            let si = ((n * s.c + sc) * s.h + y) * s.w + x;
                            let di = ((n * oc + c) * oh + y * r + i) * ow + x * r + j;
                            f(si, di);
                        }
                    }
                }
            }
        }
    }
}
