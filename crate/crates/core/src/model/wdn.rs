//! Three-stage wiring of the full network.
//!
//! The luminance input is upscaled bicubically, split into high and low
//! frequency planes and rearranged with space-to-depth (block 4) into 16 + 16
//! channels. Stage 1 runs eight 2x modules, one per (band, group); group
//! `(r1, s1)` consumes the block-4 offsets `(2*r2 + r1, 2*s2 + s1)` in path
//! order `(r2, s2)`, so its depth-to-space output is exactly the block-2
//! phase `(r1, s1)` of the full-resolution band. Stage 2 merges the four
//! phases of each band with one more 2x module, and stage 3 fuses the two
//! bands.
//!
//! Without scale division the input rearrangement uses block 2, stage 1 is
//! absent and stage 2 consumes the 4 + 4 input channels directly. Without
//! frequency division both bands carry the bicubic image itself.
//!
//! Parameter count, with `P` the size of one block (see
//! [`BlockSpec::param_count`]) and `A = 1` when attention is on, else 0:
//!
//! ```text
//! stage 1: 8 * (4 + A) * P    (0 without scale division)
//! stage 2: 2 * (4 + A) * P
//! stage 3: (1 + A) * P
//! ```
//!
//! For the desk preset (C = 16, K = 2, pixel calibration)
//! `P = 160 + 2320 + 2320 + 2320 + 145 = 7265`, giving 290 600 + 72 650 +
//! 14 530 = 377 780 trainable scalars.

use rayon::prelude::*;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::{batch_tensor, nested_offset_channel, sobel_separate, space_to_depth, upscale, ImagePlane};
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::blocks::Mode;
use super::config::WdnConfig;
use super::output::OutputModule;
use super::upsampling::{UpsamplingModule, PATHS};

pub const STAGE1_MODULES: usize = 8;
pub const BANDS: usize = 2;

/// Rearranged network inputs, `[N, b*b, H/b, W/b]` per band.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInputs<T> {
    pub hf: Tensor<T>,
    pub lf: Tensor<T>,
}

impl<T: Real> NetworkInputs<T> {
    pub fn band(&self, band: usize) -> &Tensor<T> {
        if band == 0 {
            &self.hf
        } else {
            &self.lf
        }
    }

    pub fn batch(&self) -> usize {
        self.hf.shape()[0]
    }
}

/// Bicubic-upscaled planes split into the two network bands.
pub fn split_bands(up: &ImagePlane, config: &WdnConfig) -> Result<(ImagePlane, ImagePlane)> {
    if config.frequency_division {
        let pair = sobel_separate(up)?;
        Ok((pair.hf, pair.lf))
    } else {
        Ok((up.clone(), up.clone()))
    }
}

/// Steps 1 to 3 of the pipeline for a batch of equally sized LR planes.
pub fn prepare_inputs<T: Real>(lr: &[&ImagePlane], config: &WdnConfig) -> Result<NetworkInputs<T>> {
    config.validate()?;
    let block = config.input_block();
    let mut hf = Vec::with_capacity(lr.len());
    let mut lf = Vec::with_capacity(lr.len());
    for plane in lr {
        let (h, w) = plane.dims();
        if h < 3 || w < 3 {
            return Err(Error::contract(
                "wdn_forward",
                format!("low-resolution input {h}x{w} is smaller than 3x3"),
            ));
        }
        let (uh, uw) = (h * config.scale, w * config.scale);
        if uh % 4 != 0 || uw % 4 != 0 {
            return Err(Error::contract(
                "wdn_forward",
                format!(
                    "upscaled size {uh}x{uw} must be divisible by 4; choose input dims so that scale x dims is a multiple of 4"
                ),
            ));
        }
        let up = upscale(plane, config.scale)?;
        let (a, b) = split_bands(&up, config)?;
        hf.push(a);
        lf.push(b);
    }
    let to = |planes: &[ImagePlane]| -> Result<Tensor<T>> {
        let refs: Vec<_> = planes.iter().collect();
        space_to_depth(&batch_tensor(&refs)?, block)
    };
    Ok(NetworkInputs {
        hf: to(&hf)?,
        lf: to(&lf)?,
    })
}

/// The four input channels of stage-1 module `m` (band `m / 4`, group `m % 4`).
pub fn stage1_channels(m: usize) -> [usize; PATHS] {
    let g = m % 4;
    let group = (g / 2, g % 2);
    std::array::from_fn(|p| nested_offset_channel(group, (p / 2, p % 2)))
}

/// `[N, 4, h, w]` input of stage-1 module `m`.
pub fn stage1_input<T: Real>(inputs: &NetworkInputs<T>, m: usize) -> Result<Tensor<T>> {
    let band = inputs.band(m / 4);
    let parts = stage1_channels(m)
        .iter()
        .map(|&c| band.channels(c, 1))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = parts.iter().collect();
    Tensor::concat_channels(&refs)
}

/// Graph handles of every stage output.
pub struct ForwardVars {
    pub stage1: Vec<Var>,
    pub stage2: Vec<Var>,
    /// Unclamped network output.
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct WdnModel<T> {
    pub config: WdnConfig,
    pub stage1: Vec<UpsamplingModule<T>>,
    pub stage2: Vec<UpsamplingModule<T>>,
    pub stage3: OutputModule<T>,
    /// Which stages hold trained parameters.
    pub trained: [bool; 3],
}

impl<T: Real> WdnModel<T> {
    /// Glorot-initialized model; module `i` draws from `Rng::stream(seed, i)`.
    pub fn new(config: WdnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stage1 = (0..config.stage1_modules())
            .map(|m| UpsamplingModule::new(format!("s1.m{m}"), &config, &mut Rng::stream(seed, m as u64)))
            .collect::<Result<Vec<_>>>()?;
        let stage2 = (0..BANDS)
            .map(|m| {
                UpsamplingModule::new(
                    format!("s2.m{m}"),
                    &config,
                    &mut Rng::stream(seed, (STAGE1_MODULES + m) as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let stage3 = OutputModule::new("s3", &config, &mut Rng::stream(seed, (STAGE1_MODULES + BANDS) as u64))?;
        Ok(Self {
            config,
            stage1,
            stage2,
            stage3,
            trained: [false; 3],
        })
    }

    pub fn stage_stores(&self, stage: u8) -> Vec<&ParameterStore<T>> {
        match stage {
            1 => self.stage1.iter().map(|m| &m.store).collect(),
            2 => self.stage2.iter().map(|m| &m.store).collect(),
            _ => vec![&self.stage3.store],
        }
    }

    pub fn stage_stores_mut(&mut self, stage: u8) -> Vec<&mut ParameterStore<T>> {
        match stage {
            1 => self.stage1.iter_mut().map(|m| &mut m.store).collect(),
            2 => self.stage2.iter_mut().map(|m| &mut m.store).collect(),
            _ => vec![&mut self.stage3.store],
        }
    }

    /// Every parameter group in checkpoint order.
    pub fn stores(&self) -> Vec<&ParameterStore<T>> {
        (1..=3).flat_map(|s| self.stage_stores(s)).collect()
    }

    pub fn stores_mut(&mut self) -> Vec<&mut ParameterStore<T>> {
        let mut out: Vec<&mut ParameterStore<T>> = Vec::new();
        out.extend(self.stage1.iter_mut().map(|m| &mut m.store));
        out.extend(self.stage2.iter_mut().map(|m| &mut m.store));
        out.push(&mut self.stage3.store);
        out
    }

    /// Distinct trainable scalars; shared attention parameters count once.
    pub fn count_parameters(&self) -> usize {
        self.stores().iter().map(|s| s.trainable_count()).sum()
    }

    pub fn stage_parameters(&self, stage: u8) -> usize {
        self.stage_stores(stage).iter().map(|s| s.trainable_count()).sum()
    }

    /// Per-stage counts from the closed-form formula.
    pub fn parameter_formula(config: &WdnConfig) -> [usize; 3] {
        let spec = super::blocks::BlockSpec {
            in_ch: 1,
            out_ch: 1,
            channels: config.channels,
            depth: config.block_depth,
            activation: config.activation,
        };
        let p = spec.param_count();
        let a = usize::from(config.attention);
        [
            config.stage1_modules() * (PATHS + a) * p,
            BANDS * (PATHS + a) * p,
            (1 + a) * p,
        ]
    }

    /// Toggles the Gaussian suppressor in every upsampling module.
    pub fn set_noise_suppression(&mut self, on: bool) {
        for m in self.stage1.iter_mut().chain(self.stage2.iter_mut()) {
            m.suppress_noise = on;
        }
    }

    /// Input of stage-2 module `band`, built from stage-1 outputs (or from
    /// the network inputs without scale division).
    fn stage2_input_var(&self, g: &mut Graph<T>, inputs: &NetworkInputs<T>, s1: &[Var], band: usize) -> Result<Var> {
        if self.config.scale_division {
            g.concat(&s1[band * 4..band * 4 + 4])
        } else {
            Ok(g.input(inputs.band(band).clone()))
        }
    }

    /// Whole-network forward on one graph. With `detach_stages` the inputs of
    /// stages 2 and 3 are cut from the graph.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        inputs: &NetworkInputs<T>,
        mode: Mode,
        detach_stages: bool,
    ) -> Result<ForwardVars> {
        let mut stage1 = Vec::with_capacity(self.stage1.len());
        for (m, module) in self.stage1.iter().enumerate() {
            let x = g.input(stage1_input(inputs, m)?);
            stage1.push(module.forward_stacked(g, x, mode)?);
        }
        let mut stage2 = Vec::with_capacity(BANDS);
        for (band, module) in self.stage2.iter().enumerate() {
            let mut x = self.stage2_input_var(g, inputs, &stage1, band)?;
            if detach_stages {
                x = g.detach(x);
            }
            stage2.push(module.forward_stacked(g, x, mode)?);
        }
        let (mut hf, mut lf) = (stage2[0], stage2[1]);
        if detach_stages {
            hf = g.detach(hf);
            lf = g.detach(lf);
        }
        let output = self.stage3.forward(g, hf, lf, mode)?;
        Ok(ForwardVars { stage1, stage2, output })
    }

    /// Evaluation-mode outputs of every stage-1 module, computed in parallel.
    pub fn infer_stage1(&self, inputs: &NetworkInputs<T>) -> Result<Vec<Tensor<T>>> {
        self.stage1
            .par_iter()
            .enumerate()
            .map(|(m, module)| {
                let mut g = Graph::new();
                let x = g.input(stage1_input(inputs, m)?);
                let y = module.forward_stacked(&mut g, x, Mode::Eval)?;
                Ok(g.value(y).clone())
            })
            .collect()
    }

    /// Evaluation-mode stage-2 outputs (hf, lf).
    pub fn infer_stage2(&self, inputs: &NetworkInputs<T>, stage1: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        self.stage2
            .par_iter()
            .enumerate()
            .map(|(band, module)| {
                let x = self.stage2_input(inputs, stage1, band)?;
                let mut g = Graph::new();
                let x = g.input(x);
                let y = module.forward_stacked(&mut g, x, Mode::Eval)?;
                Ok(g.value(y).clone())
            })
            .collect()
    }

    /// `[N, 4, 2h, 2w]` input of stage-2 module `band`.
    pub fn stage2_input(&self, inputs: &NetworkInputs<T>, stage1: &[Tensor<T>], band: usize) -> Result<Tensor<T>> {
        if self.config.scale_division {
            if stage1.len() != STAGE1_MODULES {
                return Err(Error::contract(
                    "wdn_forward",
                    "stage 2 needs all eight stage-1 outputs",
                ));
            }
            let refs: Vec<_> = stage1[band * 4..band * 4 + 4].iter().collect();
            Tensor::concat_channels(&refs)
        } else {
            Ok(inputs.band(band).clone())
        }
    }

    /// Evaluation-mode unclamped stage-3 output.
    pub fn infer_stage3(&self, stage2: &[Tensor<T>]) -> Result<Tensor<T>> {
        if stage2.len() != BANDS {
            return Err(Error::contract("wdn_forward", "stage 3 needs both stage-2 outputs"));
        }
        let mut g = Graph::new();
        let hf = g.input(stage2[0].clone());
        let lf = g.input(stage2[1].clone());
        let y = self.stage3.forward(&mut g, hf, lf, Mode::Eval)?;
        Ok(g.value(y).clone())
    }

    /// Evaluation-mode outputs clamped to [0, 1], `[N, 1, sH, sW]`.
    pub fn infer(&self, inputs: &NetworkInputs<T>) -> Result<Tensor<T>> {
        let s1 = if self.config.scale_division {
            self.infer_stage1(inputs)?
        } else {
            Vec::new()
        };
        let s2 = self.infer_stage2(inputs, &s1)?;
        let out = self.infer_stage3(&s2)?;
        Ok(out.map(|v| v.max(T::zero()).min(T::one())))
    }

    /// Super-resolves one luminance plane by the configured scale.
    pub fn upsample_luma(&self, lr_y: &ImagePlane) -> Result<ImagePlane> {
        let inputs = prepare_inputs(&[lr_y], &self.config)?;
        ImagePlane::from_tensor(&self.infer(&inputs)?, 0, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_parameter_count() {
        let cfg = WdnConfig::desk();
        let model = WdnModel::<f32>::new(cfg.clone(), 0).unwrap();
        let f = WdnModel::<f32>::parameter_formula(&cfg);
        assert_eq!(f, [290_600, 72_650, 14_530]);
        assert_eq!(model.count_parameters(), 377_780);
        for s in 1..=3u8 {
            assert_eq!(model.stage_parameters(s), f[s as usize - 1]);
        }
    }

    #[test]
    fn stage1_channels_partition_the_inputs() {
        let mut seen = vec![0; 16];
        for m in 0..4 {
            for c in stage1_channels(m) {
                seen[c] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
        assert_eq!(stage1_channels(0), [0, 2, 8, 10]);
        assert_eq!(stage1_channels(5), [1, 3, 9, 11]);
    }

    #[test]
    fn forward_shapes() {
        let cfg = WdnConfig {
            channels: 4,
            block_depth: 1,
            ..WdnConfig::desk()
        };
        let model = WdnModel::<f32>::new(cfg, 1).unwrap();
        let mut rng = Rng::new(2);
        let lr = ImagePlane::from_fn(8, 12, |_, _| rng.uniform(0.0, 1.0));
        let out = model.upsample_luma(&lr).unwrap();
        assert_eq!(out.dims(), (32, 48));
        assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_tiny_and_indivisible_inputs() {
        let mut cfg = WdnConfig::desk();
        let lr = ImagePlane::filled(2, 8, 0.5);
        assert!(prepare_inputs::<f32>(&[&lr], &cfg).is_err());
        cfg.scale = 3;
        let lr = ImagePlane::filled(6, 5, 0.5);
        assert!(prepare_inputs::<f32>(&[&lr], &cfg).is_err());
        let lr = ImagePlane::filled(8, 4, 0.5);
        assert!(prepare_inputs::<f32>(&[&lr], &cfg).is_ok());
    }
}
