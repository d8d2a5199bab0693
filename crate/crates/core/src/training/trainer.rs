//! Stage-wise training with freezing and early stopping, and the joint
//! training procedures used for ablations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use crate::metrics::{psnr, psnr_from_mse};
use crate::model::blocks::{Mode, BN_MOMENTUM};
use crate::model::wdn::{stage1_input, BANDS};
use crate::model::{TrainingProcedure, UpsamplingModule, WdnModel};
use crate::params::{AdamConfig, ParameterStore};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::checkpoint::Progress;
use super::data::{validate_patch, BatchTensors, Dataset};
use super::losses::{loss_output, loss_upsampling};
use super::subproblems::SubProblemSet;

/// Optimization and schedule hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// HR patch side.
    pub patch_size: usize,
    /// Epochs without sufficient improvement before stopping.
    pub patience: usize,
    /// Minimum validation PSNR gain (dB) that counts as improvement.
    pub min_improvement_db: f64,
    pub max_epochs: usize,
    /// Optimizer steps per epoch; one pass over the training images if unset.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 16,
            patch_size: 192,
            patience: 5,
            min_improvement_db: 0.01,
            max_epochs: 1000,
            steps_per_epoch: None,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            batch_size: 4,
            patch_size: 96,
            max_epochs: 200,
            ..Self::full()
        }
    }

    pub fn steps(&self, images: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| images.div_ceil(self.batch_size.max(1)))
            .max(1)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Patience rule on a metric that should increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_improvement: f64,
    pub best: f64,
    pub stale_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_improvement: f64) -> Self {
        Self {
            patience,
            min_improvement,
            best: f64::NEG_INFINITY,
            stale_epochs: 0,
        }
    }

    /// Records one epoch; returns `(improved, stop)`.
    pub fn update(&mut self, metric: f64) -> (bool, bool) {
        if metric >= self.best + self.min_improvement || (self.best == f64::NEG_INFINITY && metric.is_finite()) {
            self.best = metric;
            self.stale_epochs = 0;
            (true, false)
        } else {
            self.stale_epochs += 1;
            (false, self.stale_epochs >= self.patience)
        }
    }
}

/// One line of the JSONL training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub stage: String,
    pub epoch: usize,
    /// Optimizer steps taken so far in this stage (continues on resume).
    pub step: u64,
    /// Mean training loss per term over the epoch.
    pub losses: BTreeMap<String, f64>,
    pub val_psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub epochs: usize,
    pub best_val_psnr: f64,
    pub early_stopped: bool,
}

fn check_prerequisites<T: Real>(model: &WdnModel<T>, stage: u8) -> Result<()> {
    if !(1..=3).contains(&stage) {
        return Err(Error::Config(format!("stage must be 1, 2 or 3, got {stage}")));
    }
    for s in 1..stage {
        if s == 1 && !model.config.scale_division {
            continue;
        }
        if !model.trained[s as usize - 1] {
            return Err(Error::MissingStage { stage, missing: s });
        }
    }
    if stage == 1 && !model.config.scale_division {
        return Err(Error::Config("stage 1 does not exist without scale division".into()));
    }
    Ok(())
}

fn finish_store<T: Real>(store: &mut ParameterStore<T>, g: &Graph<T>, adam: &AdamConfig) {
    store.zero_grad();
    store.collect_grads(g);
    store.update_running_stats(g, BN_MOMENTUM);
    store.adam_step(adam);
}

/// One optimizer step of an upsampling module on `[N, 4, h, w]` inputs.
pub fn module_step<T: Real>(
    module: &mut UpsamplingModule<T>,
    input: Tensor<T>,
    target: &Tensor<T>,
    adam: &AdamConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(input);
    let y = module.forward_stacked(&mut g, x, Mode::Train)?;
    let t = g.input(target.clone());
    let loss = loss_upsampling(&mut g, y, t)?;
    g.backward(loss)?;
    finish_store(&mut module.store, &g, adam);
    Ok(g.value(loss).data()[0].as_f64())
}

/// Inputs of `stage` for a batch, produced by the frozen earlier stages.
fn stage_inputs<T: Real>(model: &WdnModel<T>, batch: &BatchTensors<T>, stage: u8) -> Result<Vec<Tensor<T>>> {
    match stage {
        1 => (0..model.stage1.len())
            .map(|m| stage1_input(&batch.inputs, m))
            .collect(),
        2 => {
            let s1 = if model.config.scale_division {
                model.infer_stage1(&batch.inputs)?
            } else {
                Vec::new()
            };
            (0..BANDS).map(|b| model.stage2_input(&batch.inputs, &s1, b)).collect()
        }
        _ => {
            let s1 = if model.config.scale_division {
                model.infer_stage1(&batch.inputs)?
            } else {
                Vec::new()
            };
            model.infer_stage2(&batch.inputs, &s1)
        }
    }
}

/// One optimizer step of every module of `stage`; returns named losses.
pub fn stage_step<T: Real>(
    model: &mut WdnModel<T>,
    stage: u8,
    batch: &BatchTensors<T>,
    adam: &AdamConfig,
) -> Result<Vec<(String, f64)>> {
    let inputs = stage_inputs(model, batch, stage)?;
    match stage {
        1 | 2 => {
            let (modules, targets) = if stage == 1 {
                (&mut model.stage1, &batch.set1)
            } else {
                (&mut model.stage2, &batch.set2)
            };
            modules
                .par_iter_mut()
                .zip(inputs.into_par_iter())
                .zip(targets.par_iter())
                .map(|((m, x), t)| Ok((m.store.group().to_string(), module_step(m, x, t, adam)?)))
                .collect()
        }
        _ => {
            let mut g = Graph::new();
            let hf = g.input(inputs[0].clone());
            let lf = g.input(inputs[1].clone());
            let y = model.stage3.forward(&mut g, hf, lf, Mode::Train)?;
            let t = g.input(batch.set3.clone());
            let loss = loss_output(&mut g, y, t)?;
            g.backward(loss)?;
            finish_store(&mut model.stage3.store, &g, adam);
            Ok(vec![("s3".to_string(), g.value(loss).data()[0].as_f64())])
        }
    }
}

fn tensor_mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let n = a.len() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

/// Validation PSNR of one stage: PSNR of the mean module MSE for stages 1
/// and 2, mean PSNR of the clamped output for stage 3.
pub fn validate_stage<T: Real>(model: &WdnModel<T>, stage: u8, sets: &[SubProblemSet]) -> Result<f64> {
    let mut total = 0.0;
    for set in sets {
        let batch = BatchTensors::<T>::from_sets(std::slice::from_ref(set))?;
        let value = match stage {
            1 => {
                let out = model.infer_stage1(&batch.inputs)?;
                out.iter().zip(&batch.set1).map(|(p, t)| tensor_mse(p, t)).sum::<f64>() / out.len() as f64
            }
            2 => {
                let s1 = if model.config.scale_division {
                    model.infer_stage1(&batch.inputs)?
                } else {
                    Vec::new()
                };
                let out = model.infer_stage2(&batch.inputs, &s1)?;
                out.iter().zip(&batch.set2).map(|(p, t)| tensor_mse(p, t)).sum::<f64>() / out.len() as f64
            }
            _ => {
                let out = model.infer(&batch.inputs)?;
                let pred = ImagePlane::from_tensor(&out, 0, 0)?;
                psnr(&pred, &set.set3)?
            }
        };
        total += value;
    }
    let mean = total / sets.len().max(1) as f64;
    Ok(if stage == 3 { mean } else { psnr_from_mse(mean) })
}

fn snapshot<T: Real>(model: &WdnModel<T>, stage: u8) -> Vec<ParameterStore<T>> {
    model.stage_stores(stage).into_iter().cloned().collect()
}

fn restore<T: Real>(model: &mut WdnModel<T>, stage: u8, saved: Vec<ParameterStore<T>>) {
    for (dst, src) in model.stage_stores_mut(stage).into_iter().zip(saved) {
        *dst = src;
    }
}

fn freeze_all_but<T: Real>(model: &mut WdnModel<T>, stage: Option<u8>) {
    for s in 1..=3u8 {
        for store in model.stage_stores_mut(s) {
            if Some(s) == stage {
                store.unfreeze();
            } else {
                store.freeze();
            }
        }
    }
}

/// Trains one stage to early stop (or the epoch cap), restores the best
/// validation parameters, marks the stage trained and freezes it.
pub fn train_stage<T: Real>(
    model: &mut WdnModel<T>,
    stage: u8,
    dataset: &Dataset,
    cfg: &TrainConfig,
    progress: &mut Progress,
    log: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<StageReport> {
    check_prerequisites(model, stage)?;
    validate_patch(cfg.patch_size, model.config.scale)?;
    let config = model.config.clone();
    let val = dataset.validation_sets(&config)?;
    let idx = stage as usize - 1;
    let mut rng = Rng::stream(cfg.seed ^ progress.epochs[idx] as u64, 0x5747_0000 + stage as u64);
    freeze_all_but(model, Some(stage));
    let steps = cfg.steps(dataset.train.len());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_improvement_db);
    let mut best = snapshot(model, stage);
    let mut early_stopped = false;
    let mut epochs = 0;
    for _ in 0..cfg.max_epochs {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for _ in 0..steps {
            let sets = dataset.sample_batch(&config, cfg.patch_size, cfg.batch_size, &mut rng)?;
            let batch = BatchTensors::<T>::from_sets(&sets)?;
            for (name, loss) in stage_step(model, stage, &batch, &cfg.adam)? {
                if !loss.is_finite() {
                    return Err(Error::Config(format!("non-finite loss in {name}")));
                }
                *sums.entry(name).or_default() += loss / steps as f64;
            }
            progress.steps[idx] += 1;
        }
        progress.epochs[idx] += 1;
        epochs += 1;
        let val_psnr = validate_stage(model, stage, &val)?;
        log(&LogRow {
            stage: stage.to_string(),
            epoch: progress.epochs[idx],
            step: progress.steps[idx],
            losses: sums,
            val_psnr,
        })?;
        let (improved, stop) = stopper.update(val_psnr);
        if improved {
            best = snapshot(model, stage);
        }
        if stop {
            early_stopped = true;
            break;
        }
    }
    restore(model, stage, best);
    model.trained[idx] = true;
    freeze_all_but(model, None);
    Ok(StageReport {
        epochs,
        best_val_psnr: stopper.best,
        early_stopped,
    })
}

/// Per-stage multipliers of the loss terms in the joint procedures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub stage1: f64,
    pub stage2: f64,
    pub stage3: f64,
}

impl LossWeights {
    pub fn for_procedure(procedure: TrainingProcedure) -> Self {
        match procedure {
            TrainingProcedure::EndToEnd => Self {
                stage1: 0.0,
                stage2: 0.0,
                stage3: 1.0,
            },
            _ => Self {
                stage1: 1.0,
                stage2: 1.0,
                stage3: 1.0,
            },
        }
    }
}

/// Computes the joint loss of a procedure on one batch and leaves the
/// gradients in every store. Returns the named loss terms (twelve when all
/// stages contribute: eight + two module MSEs, the output MSE and DSSIM).
pub fn procedure_gradients<T: Real>(
    model: &mut WdnModel<T>,
    procedure: TrainingProcedure,
    weights: LossWeights,
    batch: &BatchTensors<T>,
) -> Result<(Graph<T>, Vec<(String, f64)>)> {
    let detach = matches!(
        procedure,
        TrainingProcedure::JointNoInterstageGrad | TrainingProcedure::Stagewise
    );
    let mut g = Graph::new();
    let vars = model.forward_graph(&mut g, &batch.inputs, Mode::Train, detach)?;
    let mut terms = Vec::new();
    let mut named = Vec::new();
    let mut add_term = |g: &mut Graph<T>, name: String, v: crate::autograd::Var, w: f64| {
        named.push((name, g.value(v).data()[0].as_f64()));
        if w != 0.0 {
            terms.push(g.scale(v, T::lit(w)));
        }
    };
    for (m, &y) in vars.stage1.iter().enumerate() {
        let t = g.input(batch.set1[m].clone());
        let l = loss_upsampling(&mut g, y, t)?;
        add_term(&mut g, format!("s1.m{m}"), l, weights.stage1);
    }
    for (b, &y) in vars.stage2.iter().enumerate() {
        let t = g.input(batch.set2[b].clone());
        let l = loss_upsampling(&mut g, y, t)?;
        add_term(&mut g, format!("s2.m{b}"), l, weights.stage2);
    }
    let t = g.input(batch.set3.clone());
    let mse = loss_upsampling(&mut g, vars.output, t)?;
    add_term(&mut g, "s3.mse".into(), mse, weights.stage3);
    let s = crate::metrics::ssim_graph(&mut g, vars.output, t)?;
    let neg = g.scale(s, T::lit(-1.0));
    let dssim = g.shift(neg, T::one());
    add_term(&mut g, "s3.dssim".into(), dssim, weights.stage3);
    if terms.is_empty() {
        return Err(Error::Config("every loss weight is zero".into()));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    g.backward(total)?;
    for store in model.stores_mut() {
        store.zero_grad();
        store.collect_grads(&g);
    }
    Ok((g, named))
}

/// Trains the whole resident model with one of the joint procedures
/// (stage-wise training is delegated to [`train_stage`]). Early stopping
/// uses the validation PSNR of the final output.
pub fn train_procedure_variant<T: Real>(
    model: &mut WdnModel<T>,
    procedure: TrainingProcedure,
    dataset: &Dataset,
    cfg: &TrainConfig,
    progress: &mut Progress,
    log: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<StageReport> {
    if procedure == TrainingProcedure::Stagewise {
        let first = if model.config.scale_division { 1 } else { 2 };
        let mut last = None;
        for stage in first..=3 {
            last = Some(train_stage(model, stage, dataset, cfg, progress, log)?);
        }
        return Ok(last.expect("at least one stage"));
    }
    if !model.config.scale_division {
        return Err(Error::Config("joint procedures require scale division".into()));
    }
    validate_patch(cfg.patch_size, model.config.scale)?;
    let config = model.config.clone();
    let val = dataset.validation_sets(&config)?;
    let weights = LossWeights::for_procedure(procedure);
    let mut rng = Rng::stream(cfg.seed, 0x5747_0010);
    freeze_all_but(model, None);
    for store in model.stores_mut() {
        store.unfreeze();
    }
    let steps = cfg.steps(dataset.train.len());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_improvement_db);
    let mut best: Vec<ParameterStore<T>> = model.stores().into_iter().cloned().collect();
    let mut early_stopped = false;
    let mut epochs = 0;
    for _ in 0..cfg.max_epochs {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for _ in 0..steps {
            let sets = dataset.sample_batch(&config, cfg.patch_size, cfg.batch_size, &mut rng)?;
            let batch = BatchTensors::<T>::from_sets(&sets)?;
            let (g, named) = procedure_gradients(model, procedure, weights, &batch)?;
            for (name, loss) in named {
                if !loss.is_finite() {
                    return Err(Error::Config(format!("non-finite loss in {name}")));
                }
                *sums.entry(name).or_default() += loss / steps as f64;
            }
            for store in model.stores_mut() {
                store.update_running_stats(&g, BN_MOMENTUM);
                store.adam_step(&cfg.adam);
            }
            progress.steps[2] += 1;
        }
        progress.epochs[2] += 1;
        epochs += 1;
        let val_psnr = validate_stage(model, 3, &val)?;
        log(&LogRow {
            stage: format!("{procedure:?}"),
            epoch: progress.epochs[2],
            step: progress.steps[2],
            losses: sums,
            val_psnr,
        })?;
        let (improved, stop) = stopper.update(val_psnr);
        if improved {
            best = model.stores().into_iter().cloned().collect();
        }
        if stop {
            early_stopped = true;
            break;
        }
    }
    for (dst, src) in model.stores_mut().into_iter().zip(best) {
        *dst = src;
    }
    model.trained = [true; 3];
    freeze_all_but(model, None);
    Ok(StageReport {
        epochs,
        best_val_psnr: stopper.best,
        early_stopped,
    })
}
