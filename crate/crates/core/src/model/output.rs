//! Output module: attention-weighted fusion of the high and low frequency
//! channels followed by one processing block.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::tensor::Real;

use super::blocks::{block_forward, init_block, BlockSpec, Mode};
use super::config::WdnConfig;

pub struct OutputParts {
    /// Attention weights for (hf, lf), absent when ablated.
    pub attention: Option<(Var, Var)>,
    /// Weighted sum fed to the processing block.
    pub fused: Var,
    /// Unclamped output.
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct OutputModule<T> {
    pub store: ParameterStore<T>,
    pub spec: BlockSpec,
    pub attention: bool,
}

impl<T: Real> OutputModule<T> {
    pub fn new(group: impl Into<String>, config: &WdnConfig, rng: &mut Rng) -> Result<Self> {
        let spec = BlockSpec {
            in_ch: 1,
            out_ch: 1,
            channels: config.channels,
            depth: config.block_depth,
            activation: config.activation,
        };
        let mut store = ParameterStore::new(group);
        init_block(&mut store, "proc", &spec, rng)?;
        if config.attention {
            init_block(&mut store, "attn", &spec, rng)?;
        }
        Ok(Self {
            store,
            spec,
            attention: config.attention,
        })
    }

    pub fn parameter_formula(&self) -> usize {
        (1 + usize::from(self.attention)) * self.spec.param_count()
    }

    pub fn forward_parts(&self, g: &mut Graph<T>, hf: Var, lf: Var, mode: Mode) -> Result<OutputParts> {
        if g.value(hf).shape() != g.value(lf).shape() {
            return Err(Error::contract(
                "output_module",
                format!("hf {:?} and lf {:?} differ", g.value(hf).shape(), g.value(lf).shape()),
            ));
        }
        let (fused, attention) = if self.attention {
            let a_hf = block_forward(g, &self.store, "attn", &self.spec, hf, mode)?;
            let a_lf = block_forward(g, &self.store, "attn", &self.spec, lf, mode)?;
            let w = g.softmax_across(&[a_hf, a_lf])?;
            let wh = g.mul(hf, w[0])?;
            let wl = g.mul(lf, w[1])?;
            (g.add(wh, wl)?, Some((w[0], w[1])))
        } else {
            (g.add(hf, lf)?, None)
        };
        let output = block_forward(g, &self.store, "proc", &self.spec, fused, mode)?;
        Ok(OutputParts {
            attention,
            fused,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, hf: Var, lf: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_parts(g, hf, lf, mode)?.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn equal_inputs_fuse_to_themselves() {
        let cfg = WdnConfig {
            channels: 4,
            ..WdnConfig::desk()
        };
        let m = OutputModule::<f64>::new("s3", &cfg, &mut Rng::new(1)).unwrap();
        let mut rng = Rng::new(2);
        let x = Tensor::from_vec(&[1, 1, 8, 8], (0..64).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
        let mut g = Graph::new();
        let hf = g.input(x.clone());
        let lf = g.input(x.clone());
        let parts = m.forward_parts(&mut g, hf, lf, Mode::Eval).unwrap();
        assert!(g.value(parts.fused).max_abs_diff(&x) < 1e-12);
        let (a, b) = parts.attention.unwrap();
        for (u, v) in g.value(a).data().iter().zip(g.value(b).data()) {
            assert!((u + v - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.value(parts.output).shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = OutputModule::<f64>::new("s3", &WdnConfig::desk(), &mut Rng::new(1)).unwrap();
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[1, 1, 8, 8]));
        let b = g.input(Tensor::zeros(&[1, 1, 8, 4]));
        assert!(m.forward(&mut g, a, b, Mode::Eval).is_err());
    }
}
