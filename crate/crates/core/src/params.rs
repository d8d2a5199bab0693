//! Named trainable tensors, Adam state and Glorot initialization.

use indexmap::IndexMap;

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Adam hyperparameters. The default is the fixed-rate setting used for
/// every stage: lr 1e-4, beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
    pub kind: ParamKind,
}

impl<T: Real> Param<T> {
    fn new(value: Tensor<T>, kind: ParamKind) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            t: 0,
            value,
            kind,
        }
    }
}

/// One parameter group: every tensor of a module, addressed by name, with a
/// group-wide frozen flag. Names are qualified by the group prefix when bound
/// into a [`Graph`] or written to a checkpoint.
#[derive(Clone, Debug)]
pub struct ParameterStore<T> {
    group: String,
    frozen: bool,
    params: IndexMap<String, Param<T>>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new(group: impl Into<String>) -> Self {
        Self {
            group: group.into(),
            frozen: false,
            params: IndexMap::new(),
        }
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn qualified(&self, name: &str) -> String {
        format!("{}.{}", self.group, name)
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), Param::new(value, ParamKind::Trainable));
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), Param::new(value, ParamKind::Buffer));
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::contract("parameter", format!("unknown parameter {}", self.qualified(name))))
    }

    /// Binds parameter `name` into `graph` under its qualified name.
    pub fn bind(&self, graph: &mut Graph<T>, name: &str) -> Result<crate::autograd::Var> {
        let value = self.value(name)?;
        Ok(graph.param(&self.qualified(name), value))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Adds the gradients that `graph` holds for this group's parameters.
    /// Parameters the graph never touched keep their (zero) gradient.
    pub fn collect_grads(&mut self, graph: &Graph<T>) {
        for (name, p) in self.params.iter_mut() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let q = format!("{}.{}", self.group, name);
            if let Some(g) = graph.param_grad(&q) {
                p.grad.add_assign(&g);
            }
        }
    }

    /// Folds training-mode batch statistics recorded on `graph` into the
    /// running-mean/variance buffers: `r = momentum * r + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, graph: &Graph<T>, momentum: f64) {
        let mo = T::lit(momentum);
        for stats in graph.batch_stats() {
            let Some(layer) = stats.layer.strip_prefix(&format!("{}.", self.group)) else {
                continue;
            };
            for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
                if let Some(p) = self.params.get_mut(&format!("{layer}.{suffix}")) {
                    for (r, &b) in p.value.data_mut().iter_mut().zip(batch.iter()) {
                        *r = mo * *r + (T::one() - mo) * b;
                    }
                }
            }
        }
    }

    /// One bias-corrected Adam update of every trainable parameter. A frozen
    /// group is left untouched.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        if self.frozen {
            return;
        }
        let lr = T::lit(cfg.lr);
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let eps = T::lit(cfg.eps);
        for p in self.params.values_mut() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            p.t += 1;
            let c1 = T::one() - T::lit(cfg.beta1.powi(p.t as i32));
            let c2 = T::one() - T::lit(cfg.beta2.powi(p.t as i32));
            let g = p.grad.data();
            let m = p.m.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
            }
            let v = p.v.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            }
            let (m, v) = (p.m.data(), p.v.data());
            for ((theta, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi / c1;
                let vhat = vi / c2;
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Fan-in and fan-out of a weight shape: `shape[1]` and `shape[0]` times the
/// receptive field (product of trailing dims).
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::contract(
            "glorot_init",
            format!("shape {shape:?} needs at least two dims"),
        ));
    }
    let receptive: usize = shape[2..].iter().product();
    Ok((shape[1] * receptive, shape[0] * receptive))
}

/// Glorot-uniform draw in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init<T: Real>(shape: &[usize], rng: &mut Rng) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = fans(shape)?;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.uniform(-limit, limit))).collect();
    Tensor::from_vec(shape, data)
}
