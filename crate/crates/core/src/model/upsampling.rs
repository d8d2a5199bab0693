//! The 2x upsampling module: four processing paths weighted by a shared
//! attention block, merged by depth-to-space and smoothed by a fixed
//! Gaussian suppressor.

use std::sync::Arc;

use crate::autograd::kernels::Border;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::{gaussian_taps, SUPPRESSOR_SIGMA, SUPPRESSOR_SIZE};
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::tensor::Real;

use super::blocks::{block_forward, init_block, BlockSpec, Mode};
use super::config::WdnConfig;

pub const PATHS: usize = 4;

/// Intermediate values of one module evaluation.
pub struct ModuleParts {
    /// Softmax-normalized attention maps, one per path (absent when ablated).
    pub attention: Option<Vec<Var>>,
    /// Depth-to-space output before the Gaussian suppressor.
    pub pre_blur: Var,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct UpsamplingModule<T> {
    pub store: ParameterStore<T>,
    pub spec: BlockSpec,
    pub attention: bool,
    /// Apply the Gaussian suppressor (always on except in plumbing tests).
    pub suppress_noise: bool,
}

pub(crate) fn suppressor<T: Real>() -> Arc<Vec<T>> {
    let k = gaussian_taps(SUPPRESSOR_SIZE, SUPPRESSOR_SIGMA).expect("suppressor size is odd");
    Arc::new(k.into_iter().map(T::lit).collect())
}

impl<T: Real> UpsamplingModule<T> {
    pub fn new(group: impl Into<String>, config: &WdnConfig, rng: &mut Rng) -> Result<Self> {
        let spec = BlockSpec {
            in_ch: 1,
            out_ch: 1,
            channels: config.channels,
            depth: config.block_depth,
            activation: config.activation,
        };
        let mut store = ParameterStore::new(group);
        for i in 0..PATHS {
            init_block(&mut store, &format!("proc{i}"), &spec, rng)?;
        }
        if config.attention {
            init_block(&mut store, "attn", &spec, rng)?;
        }
        Ok(Self {
            store,
            spec,
            attention: config.attention,
            suppress_noise: true,
        })
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_formula(&self) -> usize {
        let blocks = PATHS + usize::from(self.attention);
        blocks * self.spec.param_count()
    }

    /// Runs the module on four `[N, 1, h, w]` inputs given in path order.
    pub fn forward_parts(&self, g: &mut Graph<T>, inputs: &[Var], mode: Mode) -> Result<ModuleParts> {
        if inputs.len() != PATHS {
            return Err(Error::contract(
                "upsampling_module",
                format!("expected {PATHS} inputs, got {}", inputs.len()),
            ));
        }
        for &x in inputs {
            if g.value(x).shape() != g.value(inputs[0]).shape() {
                return Err(Error::contract(
                    "upsampling_module",
                    format!(
                        "input shapes differ: {:?} vs {:?}",
                        g.value(inputs[0]).shape(),
                        g.value(x).shape()
                    ),
                ));
            }
        }
        let mut processed = Vec::with_capacity(PATHS);
        for (i, &x) in inputs.iter().enumerate() {
            processed.push(block_forward(g, &self.store, &format!("proc{i}"), &self.spec, x, mode)?);
        }
        let attention = if self.attention {
            let mut logits = Vec::with_capacity(PATHS);
            for &x in inputs {
                logits.push(block_forward(g, &self.store, "attn", &self.spec, x, mode)?);
            }
            let weights = g.softmax_across(&logits)?;
            for (p, &a) in processed.iter_mut().zip(&weights) {
                *p = g.mul(*p, a)?;
            }
            Some(weights)
        } else {
            None
        };
        let stacked = g.concat(&processed)?;
        let pre_blur = g.depth_to_space(stacked, 2)?;
        let output = if self.suppress_noise {
            let taps = suppressor();
            let rows = g.filter(pre_blur, taps.clone(), SUPPRESSOR_SIZE, 1, Border::Reflect)?;
            g.filter(rows, taps, 1, SUPPRESSOR_SIZE, Border::Reflect)?
        } else {
            pre_blur
        };
        Ok(ModuleParts {
            attention,
            pre_blur,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, inputs: &[Var], mode: Mode) -> Result<Var> {
        Ok(self.forward_parts(g, inputs, mode)?.output)
    }

    /// Same as [`forward`](Self::forward) with the paths given as the
    /// channels of one `[N, 4, h, w]` tensor.
    pub fn forward_stacked(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let inputs = (0..PATHS)
            .map(|i| g.slice_channels(x, i, 1))
            .collect::<Result<Vec<_>>>()?;
        self.forward(g, &inputs, mode)
    }
}
