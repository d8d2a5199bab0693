//! Finite-difference verification of the analytic gradients.
//!
//! Each case builds a scalar loss from a set of leaf tensors. The analytic
//! gradient from [`Graph::backward`] is compared with central differences
//! over every leaf element (or a random sample of them for large cases).
//! The error is measured norm-wise: `|a - n| / max(|a|, |n|)` over the
//! vector of checked elements. Elements whose perturbation flips the sign
//! of any relu input straddle a kink and are skipped.

use std::sync::Arc;

use crate::autograd::kernels::Border;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use crate::imaging::{gaussian_kernel, SUPPRESSOR_SIGMA, SUPPRESSOR_SIZE};
use crate::metrics::ssim_graph;
use crate::model::blocks::{block_forward, init_block, pixel_calibrate, BlockSpec, Mode};
use crate::model::{prepare_inputs, WdnConfig, WdnModel};
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::loss_output;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const THRESHOLD_F64: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub threshold: f64,
    /// Multiplies every analytic gradient by `1 + perturb` before comparing.
    pub perturb: Option<f64>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            threshold: THRESHOLD_F64,
            perturb: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckResult {
    pub op: String,
    pub checked: usize,
    /// Elements skipped because they straddle a relu kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error <= self.threshold
    }
}

/// Builds the loss from the current leaf values and returns it with the
/// graph nodes holding those leaves.
pub type Builder<'a> = dyn Fn(&mut Graph<f64>, &[Tensor<f64>]) -> Result<(Var, Vec<Var>)> + 'a;

fn evaluate(build: &Builder, leaves: &[Tensor<f64>]) -> Result<(f64, Vec<bool>)> {
    let mut g = Graph::new();
    let (loss, _) = build(&mut g, leaves)?;
    Ok((g.value(loss).data()[0], g.relu_pattern()))
}

/// Compares analytic and numeric gradients of `build`.
///
/// `samples` bounds how many leaf elements are checked; `None` checks all.
pub fn check(
    op: &str,
    leaves: Vec<Tensor<f64>>,
    build: &Builder,
    samples: Option<usize>,
    opts: &GradCheckOptions,
) -> Result<GradCheckResult> {
    let mut g = Graph::new();
    let (loss, vars) = build(&mut g, &leaves)?;
    if vars.len() != leaves.len() {
        return Err(Error::contract(
            "gradcheck",
            "builder returned a different number of leaves",
        ));
    }
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&leaves)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut positions: Vec<(usize, usize)> = leaves
        .iter()
        .enumerate()
        .flat_map(|(l, t)| (0..t.len()).map(move |i| (l, i)))
        .collect();
    let wanted = samples.unwrap_or(positions.len());
    let mut rng = Rng::stream(opts.seed, 0x6772_6164);
    for i in 0..positions.len() {
        let j = i + rng.below(positions.len() - i);
        positions.swap(i, j);
    }
    let pattern = g.relu_pattern();

    let factor = 1.0 + opts.perturb.unwrap_or(0.0);
    let (mut diff, mut a_norm, mut n_norm) = (0.0, 0.0, 0.0);
    let (mut checked, mut skipped) = (0, 0);
    let mut work = leaves.clone();
    for &(l, i) in &positions {
        if checked == wanted {
            break;
        }
        let orig = leaves[l].data()[i];
        work[l].data_mut()[i] = orig + opts.step;
        let (plus, p_plus) = evaluate(build, &work)?;
        work[l].data_mut()[i] = orig - opts.step;
        let (minus, p_minus) = evaluate(build, &work)?;
        work[l].data_mut()[i] = orig;
        if p_plus != pattern || p_minus != pattern {
            skipped += 1;
            continue;
        }
        checked += 1;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic[l].data()[i] * factor;
        diff += (a - numeric).powi(2);
        a_norm += a * a;
        n_norm += numeric * numeric;
    }
    let scale = a_norm.sqrt().max(n_norm.sqrt());
    let max_rel_error = if scale == 0.0 { 0.0 } else { diff.sqrt() / scale };
    Ok(GradCheckResult {
        op: op.to_string(),
        checked,
        skipped,
        max_rel_error,
        threshold: opts.threshold,
    })
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect()).expect("shape matches")
}

/// `mean(x * r)` for a fixed random `r`, so every output element matters.
fn project(g: &mut Graph<f64>, x: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = g.input(r.clone());
    let p = g.mul(x, r)?;
    g.mean(p)
}

fn case_conv2d(opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckResult> {
    let leaves = vec![
        random(&[1, 2, 6, 6], -1.0, 1.0, rng),
        random(&[3, 2, 3, 3], -0.5, 0.5, rng),
        random(&[3], -0.5, 0.5, rng),
    ];
    let r = random(&[1, 3, 6, 6], -1.0, 1.0, rng);
    let build = |g: &mut Graph<f64>, l: &[Tensor<f64>]| {
        let vars: Vec<Var> = l.iter().map(|t| g.variable(t.clone())).collect();
        let y = g.conv2d(vars[0], vars[1], Some(vars[2]), 1)?;
        Ok((project(g, y, &r)?, vars))
    };
    check("conv2d", leaves, &build, None, opts)
}

fn case_pixel_calibrate(opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckResult> {
    let leaves = vec![
        random(&[1, 2, 6, 6], -1.0, 1.0, rng),
        random(&[2, 2, 3, 3], -0.5, 0.5, rng),
        random(&[2], -0.5, 0.5, rng),
    ];
    let r = random(&[1, 2, 6, 6], -1.0, 1.0, rng);
    let build = |g: &mut Graph<f64>, l: &[Tensor<f64>]| {
        let vars: Vec<Var> = l.iter().map(|t| g.variable(t.clone())).collect();
        let y = pixel_calibrate(g, vars[0], vars[1], vars[2])?;
        Ok((project(g, y, &r)?, vars))
    };
    check("pixel_calibrate", leaves, &build, None, opts)
}

fn case_softmax_across(opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckResult> {
    let leaves: Vec<Tensor<f64>> = (0..4).map(|_| random(&[1, 1, 6, 6], -2.0, 2.0, rng)).collect();
    let rs: Vec<Tensor<f64>> = (0..4).map(|_| random(&[1, 1, 6, 6], -1.0, 1.0, rng)).collect();
    let build = |g: &mut Graph<f64>, l: &[Tensor<f64>]| {
        let vars: Vec<Var> = l.iter().map(|t| g.variable(t.clone())).collect();
        let weights = g.softmax_across(&vars)?;
        let mut total = None;
        for (w, r) in weights.iter().zip(&rs) {
            let term = project(g, *w, r)?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
        Ok((total.expect("four branches"), vars))
    };
    check("softmax_across", leaves, &build, None, opts)
}

fn case_gaussian_blur(opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckResult> {
    let leaves = vec![random(&[1, 2, 14, 14], 0.0, 1.0, rng)];
    let r = random(&[1, 2, 14, 14], -1.0, 1.0, rng);
    let kernel = Arc::new(gaussian_kernel(SUPPRESSOR_SIZE, SUPPRESSOR_SIGMA)?);
    let build = |g: &mut Graph<f64>, l: &[Tensor<f64>]| {
        let x = g.variable(l[0].clone());
        let y = g.filter(x, kernel.clone(), SUPPRESSOR_SIZE, SUPPRESSOR_SIZE, Border::Reflect)?;
        Ok((project(g, y, &r)?, vec![x]))
    };
    check("gaussian_blur", leaves, &build, None, opts)
}

fn case_ssim(opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckResult> {
    let leaves = vec![random(&[1, 1, 14, 14], 0.0, 1.0, rng)];
    let target = random(&[1, 1, 14, 14], 0.0, 1.0, rng);
    let build = |g: &mut Graph<f64>, l: &[Tensor<f64>]| {
        let x = g.variable(l[0].clone());
        let t = g.input(target.clone());
        Ok((ssim_graph(g, x, t)?, vec![x]))
    };
    check("ssim", leaves, &build, None, opts)
}

fn case_loss_output(opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckResult> {
    let leaves = vec![random(&[2, 1, 12, 12], 0.0, 1.0, rng)];
    let target = random(&[2, 1, 12, 12], 0.0, 1.0, rng);
    let build = |g: &mut Graph<f64>, l: &[Tensor<f64>]| {
        let x = g.variable(l[0].clone());
        let t = g.input(target.clone());
        Ok((loss_output(g, x, t)?, vec![x]))
    };
    check("loss_output", leaves, &build, None, opts)
}

fn case_processing_block(opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckResult> {
    let config = WdnConfig::desk();
    let spec = BlockSpec {
        in_ch: 1,
        out_ch: 1,
        channels: config.channels,
        depth: config.block_depth,
        activation: config.activation,
    };
    let mut store = ParameterStore::<f64>::new("block");
    init_block(&mut store, "proc", &spec, rng)?;
    let names: Vec<String> = store.iter().map(|(n, _)| n.clone()).collect();
    let leaves: Vec<Tensor<f64>> = names.iter().map(|n| store.value(n).cloned()).collect::<Result<_>>()?;
    let x = random(&[1, 1, 8, 8], -1.0, 1.0, rng);
    let r = random(&[1, 1, 8, 8], -1.0, 1.0, rng);
    let build = |g: &mut Graph<f64>, l: &[Tensor<f64>]| {
        let vars: Vec<Var> = names
            .iter()
            .zip(l)
            .map(|(n, t)| g.param(&store.qualified(n), t))
            .collect();
        let xv = g.input(x.clone());
        let y = block_forward(g, &store, "proc", &spec, xv, Mode::Train)?;
        Ok((project(g, y, &r)?, vars))
    };
    check("processing_block", leaves, &build, Some(200), opts)
}

fn case_wdn_forward(opts: &GradCheckOptions, rng: &mut Rng) -> Result<GradCheckResult> {
    let config = WdnConfig::desk();
    let model = WdnModel::<f64>::new(config.clone(), opts.seed)?;
    let lr = ImagePlane::from_fn(8, 8, |_, _| rng.uniform(0.0, 1.0));
    let inputs = prepare_inputs::<f64>(&[&lr], &config)?;
    let target = random(&[1, 1, 32, 32], 0.0, 1.0, rng);
    // One tensor per stage-1 module, the two stage-2 modules and the output module.
    let mut chosen = Vec::new();
    for s in 1..=3u8 {
        for store in model.stage_stores(s) {
            let names: Vec<&String> = store.iter().map(|(n, _)| n).collect();
            let name = names[rng.below(names.len())];
            chosen.push((store.qualified(name), store.value(name)?.clone()));
        }
    }
    let leaves: Vec<Tensor<f64>> = chosen.iter().map(|(_, t)| t.clone()).collect();
    let build = |g: &mut Graph<f64>, l: &[Tensor<f64>]| {
        let vars: Vec<Var> = chosen.iter().zip(l).map(|((n, _), t)| g.param(n, t)).collect();
        let fwd = model.forward_graph(g, &inputs, Mode::Train, false)?;
        let t = g.input(target.clone());
        Ok((loss_output(g, fwd.output, t)?, vars))
    };
    check("wdn_forward", leaves, &build, Some(24), opts)
}

/// Names of the cases run by [`run_suite`], in order.
pub const SUITE: [&str; 8] = [
    "conv2d",
    "pixel_calibrate",
    "softmax_across",
    "gaussian_blur",
    "ssim",
    "loss_output",
    "processing_block",
    "wdn_forward",
];

/// Runs one named case.
pub fn run_case(op: &str, opts: &GradCheckOptions) -> Result<GradCheckResult> {
    let index = SUITE
        .iter()
        .position(|&s| s == op)
        .ok_or_else(|| Error::Config(format!("unknown gradient check {op}")))?;
    let mut rng = Rng::stream(opts.seed, index as u64);
    match index {
        0 => case_conv2d(opts, &mut rng),
        1 => case_pixel_calibrate(opts, &mut rng),
        2 => case_softmax_across(opts, &mut rng),
        3 => case_gaussian_blur(opts, &mut rng),
        4 => case_ssim(opts, &mut rng),
        5 => case_loss_output(opts, &mut rng),
        6 => case_processing_block(opts, &mut rng),
        _ => case_wdn_forward(opts, &mut rng),
    }
}

/// Runs every case of [`SUITE`].
pub fn run_suite(opts: &GradCheckOptions) -> Result<Vec<GradCheckResult>> {
    SUITE.iter().map(|op| run_case(op, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let build = |g: &mut Graph<f64>, l: &[Tensor<f64>]| {
            let x = g.variable(l[0].clone());
            let s = g.square(x);
            Ok((g.mean(s)?, vec![x]))
        };
        let leaves = vec![Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap()];
        let r = check("square", leaves, &build, None, &GradCheckOptions::default()).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-10);
    }

    #[test]
    fn perturbation_is_detected() {
        let opts = GradCheckOptions {
            perturb: Some(1e-3),
            ..Default::default()
        };
        let r = run_case("conv2d", &opts).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn unknown_case() {
        assert!(run_case("nope", &GradCheckOptions::default()).is_err());
    }
}
