//! Processing / shared-attention blocks and the pixel-calibration layer.
//!
//! A block is a head conv (in -> C) followed by an activation, `K - 1` more
//! [conv C -> C, activation] pairs, and a tail conv (C -> out). Every conv is
//! 3x3, stride 1, reflect-padded. Processing and attention blocks share this
//! topology; attention blocks are simply bound under one name by all siblings.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{glorot_init, ParameterStore};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::config::ActivationVariant;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Whether batch normalization uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub channels: usize,
    pub depth: usize,
    pub activation: ActivationVariant,
}

fn conv_params(cout: usize, cin: usize) -> usize {
    cout * cin * 9 + cout
}

impl BlockSpec {
    /// Trainable scalars of one block.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let act = match self.activation {
            ActivationVariant::PixelCalibration => conv_params(c, c),
            ActivationVariant::Relu => 0,
            ActivationVariant::ReluBatchnorm => 2 * c,
            ActivationVariant::Highway => 2 * conv_params(c, c),
        };
        conv_params(c, self.in_ch) + act + (self.depth - 1) * (conv_params(c, c) + act) + conv_params(self.out_ch, c)
    }
}

fn add_conv<T: Real>(store: &mut ParameterStore<T>, name: &str, cout: usize, cin: usize, rng: &mut Rng) -> Result<()> {
    store.add(format!("{name}.w"), glorot_init(&[cout, cin, 3, 3], rng)?);
    store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
    Ok(())
}

/// Registers the parameters of a block under `prefix`.
pub fn init_block<T: Real>(store: &mut ParameterStore<T>, prefix: &str, spec: &BlockSpec, rng: &mut Rng) -> Result<()> {
    let c = spec.channels;
    for i in 0..=spec.depth {
        let cin = if i == 0 { spec.in_ch } else { c };
        let cout = if i == spec.depth { spec.out_ch } else { c };
        add_conv(store, &format!("{prefix}.conv{i}"), cout, cin, rng)?;
        if i == spec.depth {
            break;
        }
        let act = format!("{prefix}.act{i}");
        match spec.activation {
            ActivationVariant::PixelCalibration => add_conv(store, &act, c, c, rng)?,
            ActivationVariant::Relu => {}
            ActivationVariant::ReluBatchnorm => {
                store.add(format!("{act}.gamma"), Tensor::ones(&[c]));
                store.add(format!("{act}.beta"), Tensor::zeros(&[c]));
                store.add_buffer(format!("{act}.running_mean"), Tensor::zeros(&[c]));
                store.add_buffer(format!("{act}.running_var"), Tensor::ones(&[c]));
            }
            ActivationVariant::Highway => {
                add_conv(store, &format!("{act}.transform"), c, c, rng)?;
                add_conv(store, &format!("{act}.gate"), c, c, rng)?;
            }
        }
    }
    Ok(())
}

/// 3x3 convolution with parameters `{name}.w` and `{name}.b`.
pub fn conv<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, name: &str, x: Var) -> Result<Var> {
    let w = store.bind(g, &format!("{name}.w"))?;
    let b = store.bind(g, &format!("{name}.b"))?;
    g.conv2d(x, w, Some(b), 1)
}

/// `relu(y) * V + y * (1 - V)` with `V = sigmoid(conv3x3(y))`.
pub fn pixel_calibrate<T: Real>(g: &mut Graph<T>, y: Var, weight: Var, bias: Var) -> Result<Var> {
    let c = g.value(y).shape().get(1).copied().unwrap_or(0);
    let kc = g.value(weight).shape().first().copied().unwrap_or(0);
    if c != kc {
        return Err(Error::contract(
            "pixel_calibrate",
            format!("input has {c} channels but the layer has {kc}"),
        ));
    }
    let logits = g.conv2d(y, weight, Some(bias), 1)?;
    gated(g, y, logits, None)
}

/// `transform(y) * V + y * (1 - V)`, `transform` defaulting to `relu(y)`.
fn gated<T: Real>(g: &mut Graph<T>, y: Var, logits: Var, transform: Option<Var>) -> Result<Var> {
    let v = g.sigmoid(logits);
    let t = match transform {
        Some(t) => t,
        None => g.relu(y),
    };
    let relevant = g.mul(t, v)?;
    let neg = g.scale(v, T::lit(-1.0));
    let carry_gate = g.shift(neg, T::one());
    let carried = g.mul(y, carry_gate)?;
    g.add(relevant, carried)
}

fn activation<T: Real>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    name: &str,
    variant: ActivationVariant,
    y: Var,
    mode: Mode,
) -> Result<Var> {
    match variant {
        ActivationVariant::PixelCalibration => {
            let w = store.bind(g, &format!("{name}.w"))?;
            let b = store.bind(g, &format!("{name}.b"))?;
            pixel_calibrate(g, y, w, b)
        }
        ActivationVariant::Relu => Ok(g.relu(y)),
        ActivationVariant::ReluBatchnorm => {
            let gamma = store.bind(g, &format!("{name}.gamma"))?;
            let beta = store.bind(g, &format!("{name}.beta"))?;
            let running = match mode {
                Mode::Train => None,
                Mode::Eval => Some((
                    store.value(&format!("{name}.running_mean"))?.data(),
                    store.value(&format!("{name}.running_var"))?.data(),
                )),
            };
            let layer = store.qualified(name);
            let bn = g.batch_norm(&layer, y, gamma, beta, running, T::lit(BN_EPS))?;
            Ok(g.relu(bn))
        }
        ActivationVariant::Highway => {
            let transformed = conv(g, store, &format!("{name}.transform"), y)?;
            let transformed = g.relu(transformed);
            let logits = conv(g, store, &format!("{name}.gate"), y)?;
            gated(g, y, logits, Some(transformed))
        }
    }
}

/// Runs the block registered under `prefix` on `x`.
pub fn block_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    prefix: &str,
    spec: &BlockSpec,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    let (_, c, _, _) = g.value(x).dims4()?;
    if c != spec.in_ch {
        return Err(Error::contract(
            "processing_block",
            format!("input has {c} channels, block expects {}", spec.in_ch),
        ));
    }
    let mut h = x;
    for i in 0..=spec.depth {
        h = conv(g, store, &format!("{prefix}.conv{i}"), h)?;
        if i < spec.depth {
            h = activation(g, store, &format!("{prefix}.act{i}"), spec.activation, h, mode)?;
        }
    }
    Ok(h)
}
