//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] records every primitive as a node holding its value and the
//! indices of its inputs. Nodes are appended in evaluation order, so walking
//! them backwards is a valid topological replay. Parameters can be borrowed
//! into the graph instead of copied; the graph lives for one forward/backward
//! pass and is then dropped.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::conv::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Real};
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// `x` for `x ≥ 0`, `a·x` otherwise.
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(a) => {
                if x >= T::zero() {
                    x
                } else {
                    T::from_f64_lossy(a) * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn slope<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::from_f64_lossy(a)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Per-channel batch statistics from a train-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased standard deviation, `sqrt(var)`.
    pub std: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Concat { inputs: Vec<usize>, axis: usize },
    MatMul(usize, usize),
    Linear { x: usize, w: usize, b: Option<usize> },
    Conv { x: usize, w: usize, geom: ConvGeometry },
    Deconv { x: usize, w: usize, geom: ConvGeometry },
    ChannelBias { x: usize, b: usize },
    BatchNorm { x: usize, gamma: Option<usize>, beta: usize, xhat: Tensor<T>, inv_std: Vec<T>, train: bool },
    Activation { x: usize, act: Activation },
    LnClamp { x: usize, low: T, high: T },
}

#[derive(Debug)]
struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// The tape. `'a` is the lifetime of borrowed parameter tensors.
#[derive(Debug)]
pub struct Graph<'a, T: Real> {
    id: u64,
    nodes: Vec<Node<'a, T>>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(|g| g.take())
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Channel axis 1 of `[N, C, ...]`: returns (N, C, inner).
fn channel_layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    Some((shape[0], shape[1], shape[2..].iter().product()))
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var { index: self.nodes.len() - 1, tape: self.id }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Differentiable leaf owning its value.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), true, Op::Leaf)
    }

    /// Differentiable leaf borrowing its value.
    pub fn param(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), true, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), false, Op::Leaf)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        self.value(v).map(|t| t.shape())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        let i = self.idx(v)?;
        Ok(self.nodes[i].requires_grad)
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T, mk: fn(usize, usize) -> Op<T>) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(ia).zip_map(self.val(ib), op, f)?;
        let rg = self.rg(&[ia, ib]);
        Ok(self.push(Cow::Owned(out), rg, mk(ia, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let i = self.idx(a)?;
        let out = self.val(i).scale(c);
        let rg = self.rg(&[i]);
        Ok(self.push(Cow::Owned(out), rg, Op::Scale(i, c)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        let out = Tensor::scalar(self.val(i).sum());
        let rg = self.rg(&[i]);
        Ok(self.push(Cow::Owned(out), rg, Op::Sum(i)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let i = self.idx(a)?;
        let out = Tensor::scalar(self.val(i).mean());
        let rg = self.rg(&[i]);
        Ok(self.push(Cow::Owned(out), rg, Op::Mean(i)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let i = self.idx(a)?;
        let out = self.val(i).reshape(shape)?;
        let rg = self.rg(&[i]);
        Ok(self.push(Cow::Owned(out), rg, Op::Reshape(i)))
    }

    /// Output axis `k` is input axis `perm[k]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let i = self.idx(a)?;
        let out = self.val(i).permute(perm)?;
        let rg = self.rg(&[i]);
        Ok(self.push(Cow::Owned(out), rg, Op::Permute(i, perm.to_vec())))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let ids = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let vals: Vec<&Tensor<T>> = ids.iter().map(|&i| self.val(i)).collect();
        let out = Tensor::concat(&vals, axis)?;
        let rg = self.rg(&ids);
        Ok(self.push(Cow::Owned(out), rg, Op::Concat { inputs: ids, axis }))
    }

    /// `[m×k]·[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: av.shape().to_vec(), rhs: bv.shape().to_vec() });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(T::one(), MatRef::row_major(av.data(), m, k), MatRef::row_major(bv.data(), k, n), T::zero(), &mut out);
        let out = Tensor::from_vec(&[m, n], out)?;
        let rg = self.rg(&[ia, ib]);
        Ok(self.push(Cow::Owned(out), rg, Op::MatMul(ia, ib)))
    }

    /// `x·Wᵀ + b` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let (xv, wv) = (self.val(ix), self.val(iw));
        if xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[1] {
            return Err(Error::ShapeMismatch { op: "linear", lhs: xv.shape().to_vec(), rhs: wv.shape().to_vec() });
        }
        let (n, fin, fout) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
        let mut out = vec![T::zero(); n * fout];
        if let Some(ib) = ib {
            let bv = self.val(ib);
            if bv.shape() != [fout] {
                return Err(Error::ShapeMismatch { op: "linear", lhs: wv.shape().to_vec(), rhs: bv.shape().to_vec() });
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        let beta = if ib.is_some() { T::one() } else { T::zero() };
        gemm(T::one(), MatRef::row_major(xv.data(), n, fin), MatRef::row_major(wv.data(), fout, fin).t(), beta, &mut out);
        let out = Tensor::from_vec(&[n, fout], out)?;
        let mut ids = vec![ix, iw];
        ids.extend(ib);
        let rg = self.rg(&ids);
        Ok(self.push(Cow::Owned(out), rg, Op::Linear { x: ix, w: iw, b: ib }))
    }

    /// Strided convolution without bias; see [`conv::conv_forward`].
    pub fn conv(&mut self, x: Var, w: Var, geom: &ConvGeometry) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let out = conv::conv_forward(self.val(ix), self.val(iw), geom)?;
        let rg = self.rg(&[ix, iw]);
        Ok(self.push(Cow::Owned(out), rg, Op::Conv { x: ix, w: iw, geom: geom.clone() }))
    }

    /// Transposed convolution without bias; see [`conv::deconv_forward`].
    pub fn deconv(&mut self, x: Var, w: Var, geom: &ConvGeometry) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let out = conv::deconv_forward(self.val(ix), self.val(iw), geom)?;
        let rg = self.rg(&[ix, iw]);
        Ok(self.push(Cow::Owned(out), rg, Op::Deconv { x: ix, w: iw, geom: geom.clone() }))
    }

    /// Adds `b[c]` to every element of channel `c` of `x: [N, C, ...]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(b)?);
        let (xv, bv) = (self.val(ix), self.val(ib));
        let (n, c, inner) = channel_layout(xv.shape()).filter(|&(_, c, _)| bv.shape() == [c]).ok_or_else(|| Error::ShapeMismatch {
            op: "channel_bias",
            lhs: xv.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        })?;
        let mut out = xv.clone();
        for s in 0..n {
            for ch in 0..c {
                let bias = bv.data()[ch];
                for v in &mut out.data_mut()[(s * c + ch) * inner..(s * c + ch + 1) * inner] {
                    *v += bias;
                }
            }
        }
        let rg = self.rg(&[ix, ib]);
        Ok(self.push(Cow::Owned(out), rg, Op::ChannelBias { x: ix, b: ib }))
    }

    fn check_bn(&self, ix: usize, gamma: Option<usize>, beta: usize) -> Result<(usize, usize, usize)> {
        let xv = self.val(ix);
        let layout = channel_layout(xv.shape());
        let ok = |i: usize, c: usize| self.val(i).shape() == [c];
        match layout {
            Some((n, c, inner)) if ok(beta, c) && gamma.is_none_or(|g| ok(g, c)) => Ok((n, c, inner)),
            _ => Err(Error::ShapeMismatch { op: "batch_norm", lhs: xv.shape().to_vec(), rhs: self.val(beta).shape().to_vec() }),
        }
    }

    /// Batch normalization with batch statistics over every axis but the
    /// channel axis. `gamma = None` means a fixed unit scale.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Option<Var>, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let ix = self.idx(x)?;
        let ig = gamma.map(|g| self.idx(g)).transpose()?;
        let ib = self.idx(beta)?;
        let (n, c, inner) = self.check_bn(ix, ig, ib)?;
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let count = T::from_usize(n * inner).unwrap();
        let eps_t = T::from_f64_lossy(eps);
        let xv = self.val(ix);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for s in 0..n {
                acc += xv.data()[(s * c + ch) * inner..(s * c + ch + 1) * inner].iter().copied().sum::<T>();
            }
            mean[ch] = acc / count;
            let mut sq = T::zero();
            for s in 0..n {
                for &v in &xv.data()[(s * c + ch) * inner..(s * c + ch + 1) * inner] {
                    let d = v - mean[ch];
                    sq += d * d;
                }
            }
            var[ch] = sq / count;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let stats = BatchStats { mean: mean.clone(), std: var.iter().map(|v| v.sqrt()).collect() };
        let (xhat, out) = self.normalize(ix, ig, ib, &mean, &inv_std, (n, c, inner))?;
        let rg = self.rg(&[ix, ib]) || ig.is_some_and(|g| self.nodes[g].requires_grad);
        let var = self.push(Cow::Owned(out), rg, Op::BatchNorm { x: ix, gamma: ig, beta: ib, xhat, inv_std, train: true });
        Ok((var, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_infer(&mut self, x: Var, gamma: Option<Var>, beta: Var, mean: &[T], std: &[T], eps: f64) -> Result<Var> {
        let ix = self.idx(x)?;
        let ig = gamma.map(|g| self.idx(g)).transpose()?;
        let ib = self.idx(beta)?;
        let layout = self.check_bn(ix, ig, ib)?;
        if mean.len() != layout.1 || std.len() != layout.1 {
            return Err(Error::ShapeMismatch { op: "batch_norm", lhs: self.val(ix).shape().to_vec(), rhs: vec![mean.len()] });
        }
        let eps_t = T::from_f64_lossy(eps);
        let inv_std: Vec<T> = std.iter().map(|&s| T::one() / (s * s + eps_t).sqrt()).collect();
        let (xhat, out) = self.normalize(ix, ig, ib, mean, &inv_std, layout)?;
        let rg = self.rg(&[ix, ib]) || ig.is_some_and(|g| self.nodes[g].requires_grad);
        Ok(self.push(Cow::Owned(out), rg, Op::BatchNorm { x: ix, gamma: ig, beta: ib, xhat, inv_std, train: false }))
    }

    fn normalize(
        &self,
        ix: usize,
        ig: Option<usize>,
        ib: usize,
        mean: &[T],
        inv_std: &[T],
        (n, c, inner): (usize, usize, usize),
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let xv = self.val(ix);
        let mut xhat = xv.clone();
        let mut out = xv.clone();
        for s in 0..n {
            for ch in 0..c {
                let g = ig.map_or(T::one(), |g| self.val(g).data()[ch]);
                let b = self.val(ib).data()[ch];
                let range = (s * c + ch) * inner..(s * c + ch + 1) * inner;
                for (h, o) in xhat.data_mut()[range.clone()].iter_mut().zip(&mut out.data_mut()[range]) {
                    *h = (*h - mean[ch]) * inv_std[ch];
                    *o = g * *h + b;
                }
            }
        }
        Ok((xhat, out))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(a) = act {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidParameter(alloc::format!("leaky_relu slope must be in (0, 1], got {a}")));
            }
        }
        let i = self.idx(x)?;
        let out = self.val(i).map(|v| act.apply(v));
        let rg = self.rg(&[i]);
        Ok(self.push(Cow::Owned(out), rg, Op::Activation { x: i, act }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    /// `ln(clamp(x, low, high))`; zero gradient where clamped.
    pub fn ln_clamped(&mut self, x: Var, low: T, high: T) -> Result<Var> {
        let i = self.idx(x)?;
        let out = self.val(i).map(|v| v.max(low).min(high).ln());
        let rg = self.rg(&[i]);
        Ok(self.push(Cow::Owned(out), rg, Op::LnClamp { x: i, low, high }))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let r = self.idx(root)?;
        if !self.nodes[r].value.is_scalar() {
            return Err(Error::NonScalarRoot(self.nodes[r].value.shape().to_vec()));
        }
        if !self.nodes[r].requires_grad {
            return Err(Error::DetachedTape);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[r] = Some(Tensor::ones(self.nodes[r].value.shape())?);
        for i in (0..=r).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[*a], g.clone());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[*b], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[*a], g.clone());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[*b], g.scale(-T::one()));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[*a], g.zip_map(self.val(*b), "mul", |u, v| u * v)?);
                }
                if self.wants(*b) {
                    accumulate(&mut grads[*b], g.zip_map(self.val(*a), "mul", |u, v| u * v)?);
                }
            }
            Op::Scale(a, c) => accumulate(&mut grads[*a], g.scale(*c)),
            Op::Sum(a) => {
                let gv = g.data()[0];
                accumulate(&mut grads[*a], Tensor::full(self.val(*a).shape(), gv)?);
            }
            Op::Mean(a) => {
                let x = self.val(*a);
                let gv = g.data()[0] / T::from_usize(x.numel()).unwrap();
                accumulate(&mut grads[*a], Tensor::full(x.shape(), gv)?);
            }
            Op::Reshape(a) => accumulate(&mut grads[*a], g.reshape(self.val(*a).shape())?),
            Op::Permute(a, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (k, &p) in perm.iter().enumerate() {
                    inverse[p] = k;
                }
                accumulate(&mut grads[*a], g.permute(&inverse)?);
            }
            Op::Concat { inputs, axis } => {
                let sizes: Vec<usize> = inputs.iter().map(|&k| self.val(k).shape()[*axis]).collect();
                for (&k, piece) in inputs.iter().zip(g.split(*axis, &sizes)?) {
                    if self.wants(k) {
                        accumulate(&mut grads[k], piece);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let gm = MatRef::row_major(g.data(), m, n);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(T::one(), gm, MatRef::row_major(bv.data(), k, n).t(), T::zero(), &mut da);
                    accumulate(&mut grads[*a], Tensor::from_vec(&[m, k], da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(T::one(), MatRef::row_major(av.data(), m, k).t(), gm, T::zero(), &mut db);
                    accumulate(&mut grads[*b], Tensor::from_vec(&[k, n], db)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (n, fin, fout) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                let gm = MatRef::row_major(g.data(), n, fout);
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * fin];
                    gemm(T::one(), gm, MatRef::row_major(wv.data(), fout, fin), T::zero(), &mut dx);
                    accumulate(&mut grads[*x], Tensor::from_vec(&[n, fin], dx)?);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    gemm(T::one(), gm.t(), MatRef::row_major(xv.data(), n, fin), T::zero(), &mut dw);
                    accumulate(&mut grads[*w], Tensor::from_vec(&[fout, fin], dw)?);
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let mut db = vec![T::zero(); fout];
                    for row in g.data().chunks(fout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads[b], Tensor::from_vec(&[fout], db)?);
                }
            }
            Op::Conv { x, w, geom } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                if self.wants(*x) {
                    accumulate(&mut grads[*x], conv::conv_backward_data(g, wv, geom, &xv.shape()[2..])?);
                }
                if self.wants(*w) {
                    accumulate(&mut grads[*w], conv::conv_backward_weight(xv, g, geom, wv.shape()[0])?);
                }
            }
            Op::Deconv { x, w, geom } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                if self.wants(*x) {
                    accumulate(&mut grads[*x], conv::deconv_backward_data(g, wv, geom)?);
                }
                if self.wants(*w) {
                    accumulate(&mut grads[*w], conv::deconv_backward_weight(xv, g, geom)?);
                }
            }
            Op::ChannelBias { x, b } => {
                if self.wants(*x) {
                    accumulate(&mut grads[*x], g.clone());
                }
                if self.wants(*b) {
                    let (n, c, inner) = channel_layout(g.shape()).unwrap();
                    let mut db = vec![T::zero(); c];
                    for s in 0..n {
                        for (ch, d) in db.iter_mut().enumerate() {
                            *d += g.data()[(s * c + ch) * inner..(s * c + ch + 1) * inner].iter().copied().sum::<T>();
                        }
                    }
                    accumulate(&mut grads[*b], Tensor::from_vec(&[c], db)?);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (n, c, inner) = channel_layout(g.shape()).unwrap();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let range = (s * c + ch) * inner..(s * c + ch + 1) * inner;
                        for (&gy, &h) in g.data()[range.clone()].iter().zip(&xhat.data()[range]) {
                            dbeta[ch] += gy;
                            dgamma[ch] += gy * h;
                        }
                    }
                }
                if self.wants(*x) {
                    let count = T::from_usize(n * inner).unwrap();
                    let mut dx = g.clone();
                    for s in 0..n {
                        for ch in 0..c {
                            let scale = gamma.map_or(T::one(), |k| self.val(k).data()[ch]) * inv_std[ch];
                            let range = (s * c + ch) * inner..(s * c + ch + 1) * inner;
                            let hs = &xhat.data()[range.clone()];
                            for (d, &h) in dx.data_mut()[range].iter_mut().zip(hs) {
                                *d = if *train { scale * (*d - dbeta[ch] / count - h * dgamma[ch] / count) } else { scale * *d };
                            }
                        }
                    }
                    accumulate(&mut grads[*x], dx);
                }
                if let Some(k) = gamma.filter(|&k| self.wants(k)) {
                    accumulate(&mut grads[k], Tensor::from_vec(&[c], dgamma)?);
                }
                if self.wants(*beta) {
                    accumulate(&mut grads[*beta], Tensor::from_vec(&[c], dbeta)?);
                }
            }
            Op::Activation { x, act } => {
                let xv = self.val(*x);
                let yv = &node.value;
                let data = g.data().iter().zip(xv.data().iter().zip(yv.data())).map(|(&gy, (&xi, &yi))| gy * act.slope(xi, yi)).collect();
                accumulate(&mut grads[*x], Tensor::from_vec(xv.shape(), data)?);
            }
            Op::LnClamp { x, low, high } => {
                let xv = self.val(*x);
                let data =
                    g.data().iter().zip(xv.data()).map(|(&gy, &xi)| if xi > *low && xi < *high { gy / xi } else { T::zero() }).collect();
                accumulate(&mut grads[*x], Tensor::from_vec(xv.shape(), data)?);
            }
        }
        Ok(())
    }
}
