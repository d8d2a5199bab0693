//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so the backward pass walks the tape once in reverse.
//! Parameters are bound by name: binding the same name twice returns the same
//! node, which is how weight sharing accumulates gradients from every use.

pub mod kernels;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::imaging::rearrange::{depth_to_space, space_to_depth};
use crate::tensor::{Real, Tensor};
use kernels::{Border, ConvGeom, FilterGeom};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Square(Var),
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Softmax(Var),
    SpaceToDepth(Var, usize),
    DepthToSpace(Var, usize),
    Filter {
        x: Var,
        kernel: Arc<Vec<T>>,
        geom: FilterGeom,
    },
    Mean(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub layer: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// A recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    grads: Vec<Option<Tensor<T>>>,
    batch_stats: Vec<BatchStats<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(
            op,
            format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            batch_stats: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; gradients are not propagated into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient but is not a named parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a named trainable tensor. Repeated binds of one name share a node.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Cuts the gradient path: a constant copy of `v`'s value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let kshape = match kv.shape() {
            &[co, ci, kh, kw] => (co, ci, kh, kw),
            s => return Err(Error::contract("conv2d", format!("kernel must be 4-d, got {s:?}"))),
        };
        let geom = ConvGeom::new(xv.dims4()?, kshape, stride)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [kshape.0] {
                return Err(Error::contract(
                    "conv2d",
                    format!("bias shape {:?} != [{}]", self.value(b).shape(), kshape.0),
                ));
            }
        }
        let data = geom.forward(xv.data(), kv.data(), bias.map(|b| self.nodes[b.0].value.data()));
        let (oh, ow) = geom.out_hw();
        let value = Tensor::from_vec(&[geom.n, geom.cout, oh, ow], data)?;
        let rg = self.rg(x) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv2d { x, kernel, bias, geom }, rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn shift(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(value, Op::Shift(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Stacks 4-d nodes along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&tensors)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).channels(start, len)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    /// Softmax over the channel axis at every (batch, pixel) position.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        let plane = h * w;
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let mut m = T::neg_infinity();
                for ch in 0..c {
                    m = m.max(src[base + ch * plane + p]);
                }
                let mut total = T::zero();
                for ch in 0..c {
                    let e = (src[base + ch * plane + p] - m).exp();
                    out[base + ch * plane + p] = e;
                    total += e;
                }
                for ch in 0..c {
                    out[base + ch * plane + p] = out[base + ch * plane + p] / total;
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, h, w], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Per-pixel softmax across `k >= 2` same-shaped single-branch tensors.
    pub fn softmax_across(&mut self, branches: &[Var]) -> Result<Vec<Var>> {
        if branches.len() < 2 {
            return Err(Error::contract("softmax_across", "needs at least two branches"));
        }
        let first = self.value(branches[0]).shape().to_vec();
        for &b in branches {
            same_shape("softmax_across", self.value(branches[0]), self.value(b))?;
        }
        let (_, c, _, _) = self.value(branches[0]).dims4()?;
        if c != 1 {
            return Err(Error::contract(
                "softmax_across",
                format!("branches must have one channel, got shape {first:?}"),
            ));
        }
        let stacked = self.concat(branches)?;
        let weights = self.softmax_channels(stacked)?;
        (0..branches.len())
            .map(|i| self.slice_channels(weights, i, 1))
            .collect()
    }

    pub fn space_to_depth(&mut self, x: Var, block: usize) -> Result<Var> {
        let value = space_to_depth(self.value(x), block)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SpaceToDepth(x, block), rg))
    }

    pub fn depth_to_space(&mut self, x: Var, block: usize) -> Result<Var> {
        let value = depth_to_space(self.value(x), block)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::DepthToSpace(x, block), rg))
    }

    /// Depthwise filtering of every channel with a fixed (non-trainable) kernel.
    pub fn filter(&mut self, x: Var, kernel: Arc<Vec<T>>, kh: usize, kw: usize, border: Border) -> Result<Var> {
        if kernel.len() != kh * kw {
            return Err(Error::contract("filter", "kernel length does not match its extent"));
        }
        let (n, c, h, w) = self.value(x).dims4()?;
        let geom = FilterGeom::new(n * c, h, w, kh, kw, border)?;
        let data = geom.forward(self.value(x).data(), &kernel);
        let (oh, ow) = geom.out_hw();
        let value = Tensor::from_vec(&[n, c, oh, ow], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Filter { x, kernel, geom }, rg))
    }

    /// Mean of all elements, as a one-element node.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::contract("reduce_mean", "empty tensor"));
        }
        let value = Tensor::scalar(xv.mean());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mean(x), rg))
    }

    /// Batch normalization over (batch, height, width) per channel.
    ///
    /// In training mode the batch statistics are used and recorded (see
    /// [`Graph::batch_stats`]); otherwise `running` supplies mean and variance.
    pub fn batch_norm(
        &mut self,
        layer: &str,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::contract(
                "batch_norm",
                format!("affine parameters must have shape [{c}]"),
            ));
        }
        let plane = h * w;
        let count = T::lit((n * plane) as f64);
        let src = self.value(x).data();
        let (mean, var, training) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += src[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                    }
                    let mu = s / count;
                    let mut q = T::zero();
                    for b in 0..n {
                        for &v in &src[(b * c + ch) * plane..][..plane] {
                            q += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = q / count;
                }
                (mean, var, true)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * plane;
                for p in 0..plane {
                    out[o + p] = g[ch] * (src[o + p] - mean[ch]) * inv_std[ch] + bt[ch];
                }
            }
        }
        if training {
            self.batch_stats.push(BatchStats {
                layer: layer.to_string(),
                mean: mean.clone(),
                var,
            });
        }
        let value = Tensor::from_vec(&[n, c, h, w], out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                training,
            },
            rg,
        ))
    }

    pub fn batch_stats(&self) -> &[BatchStats<T>] {
        &self.batch_stats
    }

    /// Sign pattern of every relu input, one flag per element in graph order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a named parameter (zeros when it was unreachable).
    pub fn param_grad(&self, name: &str) -> Option<Tensor<T>> {
        let v = self.param_var(name)?;
        Some(
            self.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape())),
        )
    }

    /// Populates gradients of the one-element `loss` with respect to every
    /// node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, kernel, bias, geom } => {
                let xv = self.value(*x);
                let kv = self.value(*kernel);
                let (dx, dk, db) = geom.backward(xv.data(), kv.data(), g.data());
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx)?);
                self.accumulate(grads, *kernel, Tensor::from_vec(kv.shape(), dk)?);
                if let Some(b) = bias {
                    self.accumulate(grads, *b, Tensor::from_vec(&[geom.cout], db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |d, y| d * y)?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |d, x| d * x)?);
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, |d, y| d / y)?);
                }
                if self.rg(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = node.value.zip_map(bv, |q, y| q / y)?;
                    self.accumulate(grads, *b, g.zip_map(&q, |d, r| -d * r)?);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|d| d * *s)),
            Op::Shift(a) => self.accumulate(grads, *a, g.clone()),
            Op::Square(a) => {
                let two = T::lit(2.0);
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |d, x| two * x * d)?);
            }
            Op::Relu(a) => {
                // Subgradient at exactly zero is zero.
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |d, x| if x > T::zero() { d } else { T::zero() })?,
                );
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(&node.value, |d, y| d * y * (T::one() - y))?);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    if self.rg(p) {
                        self.accumulate(grads, p, g.channels(start, c)?);
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let (n, c, h, w) = xv.dims4()?;
                let len = node.value.shape()[1];
                let plane = h * w;
                let mut dx = vec![T::zero(); xv.len()];
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    dx[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
                }
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx)?);
            }
            Op::Softmax(x) => {
                let (n, c, h, w) = node.value.dims4()?;
                let plane = h * w;
                let y = node.value.data();
                let d = g.data();
                let mut dx = vec![T::zero(); y.len()];
                for b in 0..n {
                    let base = b * c * plane;
                    for p in 0..plane {
                        let mut dot = T::zero();
                        for ch in 0..c {
                            let k = base + ch * plane + p;
                            dot += y[k] * d[k];
                        }
                        for ch in 0..c {
                            let k = base + ch * plane + p;
                            dx[k] = y[k] * (d[k] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(node.value.shape(), dx)?);
            }
            Op::SpaceToDepth(x, b) => self.accumulate(grads, *x, depth_to_space(g, *b)?),
            Op::DepthToSpace(x, b) => self.accumulate(grads, *x, space_to_depth(g, *b)?),
            Op::Filter { x, kernel, geom } => {
                let dx = geom.backward(kernel, g.data());
                self.accumulate(grads, *x, Tensor::from_vec(self.value(*x).shape(), dx)?);
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let share = g.data()[0] / T::lit(xv.len() as f64);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), share));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                training,
            } => {
                let xv = self.value(*x);
                let (n, c, h, w) = xv.dims4()?;
                let plane = h * w;
                let m = T::lit((n * plane) as f64);
                let gv = self.value(*gamma).data();
                let d = g.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xv.len()];
                for ch in 0..c {
                    let xhat = |o: usize| (xv.data()[o] - mean[ch]) * inv_std[ch];
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for b in 0..n {
                        let o = (b * c + ch) * plane;
                        for p in 0..plane {
                            sum_d += d[o + p];
                            sum_dx += d[o + p] * xhat(o + p);
                        }
                    }
                    dgamma[ch] = sum_dx;
                    dbeta[ch] = sum_d;
                    let scale = gv[ch] * inv_std[ch];
                    for b in 0..n {
                        let o = (b * c + ch) * plane;
                        for p in 0..plane {
                            dx[o + p] = if *training {
                                scale / m * (m * d[o + p] - sum_d - xhat(o + p) * sum_dx)
                            } else {
                                scale * d[o + p]
                            };
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx)?);
                self.accumulate(grads, *gamma, Tensor::from_vec(&[c], dgamma)?);
                self.accumulate(grads, *beta, Tensor::from_vec(&[c], dbeta)?);
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
