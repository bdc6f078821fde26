//! Hand-written layers over flat parameter vectors.
//!
//! Every network in the crate keeps all of its weights in one contiguous
//! `Vec<T>` described by a [`ParamLayout`]. That makes optimizer steps,
//! exponential moving averages, checkpointing and finite-difference checks
//! plain slice loops.

use crate::scalar::{ops, Scalar};
use rand::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named tensors laid out back to back in a flat buffer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len;
        let spec = TensorSpec { name: name.into(), shape: shape.to_vec(), offset };
        self.len += spec.len();
        self.tensors.push(spec);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Fills a tensor with `U(-bound, bound)`.
pub fn init_uniform<T: Scalar, R: Rng + ?Sized>(params: &mut [T], spec: &TensorSpec, bound: f64, rng: &mut R) {
    for v in &mut params[spec.range()] {
        *v = T::lit(rng.random_range(-bound..=bound));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// Exponential linear unit with unit scale; continuously differentiable.
    Elu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp() - T::one()
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    pub fn derivative<T: Scalar>(self, pre: T, post: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Elu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    post + T::one()
                }
            }
            Activation::Tanh => T::one() - post * post,
        }
    }
}

/// Dense layer `y = x·Wᵀ + b`, with `W` stored `out×in`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn register(layout: &mut ParamLayout, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = layout.push(format!("{name}.weight"), &[out_dim, in_dim]);
        let bias = layout.push(format!("{name}.bias"), &[out_dim]);
        Self { in_dim, out_dim, weight, bias }
    }

    fn w<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.weight..self.weight + self.in_dim * self.out_dim]
    }

    fn b<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.bias..self.bias + self.out_dim]
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, p: &mut [T], rng: &mut R) {
        let bound = 1.0 / (self.in_dim as f64).sqrt();
        for v in &mut p[self.weight..self.weight + self.in_dim * self.out_dim] {
            *v = T::lit(rng.random_range(-bound..=bound));
        }
        for v in &mut p[self.bias..self.bias + self.out_dim] {
            *v = T::lit(rng.random_range(-bound..=bound));
        }
    }

    /// `x: batch×in` → `out: batch×out`.
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], batch: usize, out: &mut [T]) {
        let b = self.b(p);
        for row in out.chunks_exact_mut(self.out_dim).take(batch) {
            row.copy_from_slice(b);
        }
        ops::matmul_a_bt(x, self.w(p), batch, self.in_dim, self.out_dim, &mut out[..batch * self.out_dim], true);
    }

    /// Accumulates parameter gradients into `grad`; writes `dx` when asked.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        x: &[T],
        dy: &[T],
        batch: usize,
        grad: &mut [T],
        dx: Option<&mut [T]>,
    ) {
        let (o, i) = (self.out_dim, self.in_dim);
        ops::matmul_at_b(dy, x, o, batch, i, &mut grad[self.weight..self.weight + o * i], true);
        let gb = &mut grad[self.bias..self.bias + o];
        for row in dy.chunks_exact(o).take(batch) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if let Some(dx) = dx {
            ops::matmul(dy, self.w(p), batch, o, i, &mut dx[..batch * i], false);
        }
    }
}

/// 3×3 convolution, stride 2, zero padding 1, over `C×H×W` inputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub weight: usize,
    pub bias: usize,
}

const K: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

impl Conv2d {
    pub fn register(layout: &mut ParamLayout, name: &str, in_ch: usize, out_ch: usize, in_h: usize, in_w: usize) -> Self {
        let weight = layout.push(format!("{name}.weight"), &[out_ch, in_ch, K, K]);
        let bias = layout.push(format!("{name}.bias"), &[out_ch]);
        let out_h = (in_h + 2 * PAD - K) / STRIDE + 1;
        let out_w = (in_w + 2 * PAD - K) / STRIDE + 1;
        Self { in_ch, out_ch, in_h, in_w, out_h, out_w, weight, bias }
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * K * K
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn out_len(&self) -> usize {
        self.out_ch * self.positions()
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, p: &mut [T], rng: &mut R) {
        let bound = 1.0 / (self.patch_len() as f64).sqrt();
        for v in &mut p[self.weight..self.weight + self.out_ch * self.patch_len()] {
            *v = T::lit(rng.random_range(-bound..=bound));
        }
        for v in &mut p[self.bias..self.bias + self.out_ch] {
            *v = T::lit(rng.random_range(-bound..=bound));
        }
    }

    /// Unfolds one input into `patch_len × positions` columns.
    pub fn im2col<T: Scalar>(&self, input: &[T], cols: &mut [T]) {
        let p = self.positions();
        for c in 0..self.in_ch {
            for ky in 0..K {
                for kx in 0..K {
                    let row = (c * K + ky) * K + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        for ox in 0..self.out_w {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            dst[oy * self.out_w + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.in_h
                                && (ix as usize) < self.in_w
                            {
                                input[(c * self.in_h + iy as usize) * self.in_w + ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], dinput: &mut [T]) {
        let p = self.positions();
        for c in 0..self.in_ch {
            for ky in 0..K {
                for kx in 0..K {
                    let row = (c * K + ky) * K + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy as usize >= self.in_h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix < 0 || ix as usize >= self.in_w {
                                continue;
                            }
                            dinput[(c * self.in_h + iy as usize) * self.in_w + ix as usize] += src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }

    /// `cols` must come from [`Conv2d::im2col`]; `out` is `out_ch × positions`.
    pub fn forward_cols<T: Scalar>(&self, p: &[T], cols: &[T], out: &mut [T]) {
        let n = self.positions();
        for (oc, row) in out.chunks_exact_mut(n).take(self.out_ch).enumerate() {
            row.fill(p[self.bias + oc]);
        }
        let w = &p[self.weight..self.weight + self.out_ch * self.patch_len()];
        ops::matmul(w, cols, self.out_ch, self.patch_len(), n, out, true);
    }

    pub fn backward_cols<T: Scalar>(
        &self,
        p: &[T],
        cols: &[T],
        dout: &[T],
        grad: &mut [T],
        dinput: Option<(&mut [T], &mut Vec<T>)>,
    ) {
        let n = self.positions();
        let pl = self.patch_len();
        ops::matmul_a_bt(dout, cols, self.out_ch, n, pl, &mut grad[self.weight..self.weight + self.out_ch * pl], true);
        for (oc, row) in dout.chunks_exact(n).take(self.out_ch).enumerate() {
            grad[self.bias + oc] += row.iter().copied().sum::<T>();
        }
        if let Some((dinput, scratch)) = dinput {
            scratch.resize(pl * n, T::zero());
            let w = &p[self.weight..self.weight + self.out_ch * pl];
            ops::matmul_at_b(w, dout, pl, self.out_ch, n, scratch, false);
            self.col2im_add(scratch, dinput);
        }
    }
}

/// Per-row layer normalization with a learned gain and bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub dim: usize,
    pub gain: usize,
    pub bias: usize,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn register(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        let gain = layout.push(format!("{name}.gain"), &[dim]);
        let bias = layout.push(format!("{name}.bias"), &[dim]);
        Self { dim, gain, bias }
    }

    pub fn init<T: Scalar>(&self, p: &mut [T]) {
        p[self.gain..self.gain + self.dim].iter_mut().for_each(|v| *v = T::one());
        p[self.bias..self.bias + self.dim].iter_mut().for_each(|v| *v = T::zero());
    }

    /// Writes `out` and returns the normalized inputs and per-row inverse
    /// standard deviations needed by [`LayerNorm::backward`].
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], out: &mut [T]) -> (Vec<T>, Vec<T>) {
        let d = self.dim;
        let n = T::lit(d as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv = Vec::with_capacity(x.len() / d);
        for ((row, xh), o) in x.chunks_exact(d).zip(xhat.chunks_exact_mut(d)).zip(out.chunks_exact_mut(d)) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + T::lit(LAYER_NORM_EPS)).sqrt();
            for k in 0..d {
                xh[k] = (row[k] - mean) * s;
                o[k] = xh[k] * p[self.gain + k] + p[self.bias + k];
            }
            inv.push(s);
        }
        (xhat, inv)
    }

    pub fn backward<T: Scalar>(&self, p: &[T], xhat: &[T], inv: &[T], dy: &[T], grad: &mut [T]) -> Vec<T> {
        let d = self.dim;
        let n = T::lit(d as f64);
        let mut dx = vec![T::zero(); dy.len()];
        for (r, ((xh, g), dxr)) in xhat.chunks_exact(d).zip(dy.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).enumerate() {
            let mut sum = T::zero();
            let mut dot = T::zero();
            for k in 0..d {
                grad[self.gain + k] += g[k] * xh[k];
                grad[self.bias + k] += g[k];
                let dxh = g[k] * p[self.gain + k];
                sum += dxh;
                dot += dxh * xh[k];
            }
            for k in 0..d {
                let dxh = g[k] * p[self.gain + k];
                dxr[k] = inv[r] * (dxh - sum / n - xh[k] * dot / n);
            }
        }
        dx
    }
}

/// Fully connected stack with one activation for hidden layers and one for
/// the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<T> {
    pub batch: usize,
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    pub out: Vec<T>,
}

impl Mlp {
    pub fn register(layout: &mut ParamLayout, name: &str, dims: &[usize], hidden: Activation, output: Activation) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::register(layout, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers, hidden, output }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, p: &mut [T], rng: &mut R) {
        for l in &self.layers {
            l.init(p, rng);
        }
    }

    fn act(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], batch: usize) -> MlpCache<T> {
        let mut cache = MlpCache { batch, ..Default::default() };
        let mut cur = x[..batch * self.in_dim()].to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut pre = vec![T::zero(); batch * l.out_dim];
            l.forward(p, &cur, batch, &mut pre);
            let act = self.act(i);
            let post: Vec<T> = pre.iter().map(|&v| act.apply(v)).collect();
            cache.inputs.push(cur);
            cache.pre.push(pre);
            cur = post;
        }
        cache.out = cur;
        cache
    }

    /// Output only, no cache.
    pub fn infer<T: Scalar>(&self, p: &[T], x: &[T], batch: usize) -> Vec<T> {
        self.forward(p, x, batch).out
    }

    /// Backpropagates `dout` (gradient w.r.t. the activated output). Returns
    /// the gradient with respect to the input.
    pub fn backward<T: Scalar>(&self, p: &[T], cache: &MlpCache<T>, dout: &[T], grad: &mut [T]) -> Vec<T> {
        let batch = cache.batch;
        let mut d = dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let act = self.act(i);
            let pre = &cache.pre[i];
            let post_of = |j: usize| -> T {
                if i + 1 == self.layers.len() {
                    cache.out[j]
                } else {
                    cache.inputs[i + 1][j]
                }
            };
            for (j, dv) in d.iter_mut().enumerate() {
                *dv *= act.derivative(pre[j], post_of(j));
            }
            let mut dx = vec![T::zero(); batch * l.in_dim];
            l.backward(p, &cache.inputs[i], &d, batch, grad, Some(&mut dx));
            d = dx;
        }
        d
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr: T::lit(lr),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// `target ← (1 − mix)·target + mix·online`, elementwise.
pub fn soft_update<T: Scalar>(target: &mut [T], online: &[T], mix: T) {
    let keep = T::one() - mix;
    for (t, &o) in target.iter_mut().zip(online) {
        *t = keep * *t + mix * o;
    }
}
