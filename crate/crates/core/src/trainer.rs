//! Fine-tuning loop: encoder, optional mixup on the pooled features, head,
//! loss, Adam.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, LabelKind, Split};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalResult, Metric};
use crate::mixup::{self, LambdaPolicy, MixPlan, MixupConfig};
use crate::model::{self, BatchLabels, EncodedBatch, HeadKind, ModelConfig, Parameters};
use crate::numerics::{self, Tensor};
use crate::rng;

const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled decay, applied to weight matrices only.
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub mixup: MixupConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: Some(1.0),
            seed: 0,
            mixup: MixupConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("train.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("train.learning_rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(format!("train.{name} must be in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::validation("train.adam_eps must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::validation("train.weight_decay must be non-negative"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::validation("train.grad_clip_norm must be positive"));
            }
        }
        self.mixup.validate()
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub grads: Parameters,
    pub plan: Option<MixPlan>,
}

/// One forward/backward pass. When `mix_active` a plan is drawn from
/// `mixup_rng`; dropout masks come from `dropout_rng`. Keeping the two streams
/// apart means a λ = 1 mix leaves every other draw untouched.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    config: &ModelConfig,
    params: &Parameters,
    batch: &EncodedBatch,
    mix_active: bool,
    mixup_config: &MixupConfig,
    dropout_rng: &mut R1,
    mixup_rng: &mut R2,
) -> Result<StepOutput> {
    let plan = if mix_active {
        Some(mixup::make_plan(batch.batch_size, mixup_config, mixup_rng)?)
    } else {
        None
    };
    let (loss, grads) = step_with_plan(config, params, batch, plan.as_ref(), dropout_rng)?;
    Ok(StepOutput { loss, grads, plan })
}

/// Same as [`train_step`] with the mix plan supplied by the caller.
pub fn step_with_plan<R: Rng + ?Sized>(
    config: &ModelConfig,
    params: &Parameters,
    batch: &EncodedBatch,
    plan: Option<&MixPlan>,
    dropout_rng: &mut R,
) -> Result<(f64, Parameters)> {
    let encoded = model::encode(config, params, batch, true, dropout_rng)?;
    let (pooled, targets, mix) = match plan {
        Some(plan) => {
            let mixed = mixup::mix_representations(&encoded.output, plan)?;
            let targets = mixup::mix_labels(batch.labels.targets(), plan)?;
            (mixed.output.clone(), targets, Some(mixed))
        }
        None => (encoded.output.clone(), batch.labels.targets().clone(), None),
    };
    let head = model::head_forward(params, &pooled)?;
    let loss = match (&config.head, &batch.labels) {
        (HeadKind::Classification { .. }, BatchLabels::Classes { .. }) => {
            numerics::cross_entropy_soft(&head.output, &targets)?
        }
        (HeadKind::Regression, BatchLabels::Scores(_)) => numerics::mse(&head.output, &targets)?,
        _ => return Err(Error::validation("batch labels do not match the model head")),
    };
    let value = loss.output.data()[0];
    if !value.is_finite() {
        let culprit = params
            .first_non_finite()
            .map(|n| format!("parameter '{n}'"))
            .or_else(|| (!encoded.output.is_finite()).then(|| "pooled representation".into()))
            .or_else(|| (!pooled.is_finite()).then(|| "mixed representation".into()))
            .or_else(|| (!head.output.is_finite()).then(|| "head output".into()))
            .unwrap_or_else(|| "loss".into());
        return Err(Error::NonFinite(format!("{culprit} (loss = {value})")));
    }

    let d_head = loss.backward(&Tensor::scalar(1.0)).swap_remove(0);
    let gh = head.backward(&d_head);
    let d_pooled = match &mix {
        Some(m) => m.backward(&gh[0]).swap_remove(0),
        None => gh[0].clone(),
    };
    let mut grads = encoded.backward(&d_pooled);
    grads.accumulate("head.weight", &gh[1])?;
    grads.accumulate("head.bias", &gh[2])?;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of parameter '{name}'")));
    }
    Ok((value, grads))
}

/// First and second moment estimates plus the number of updates applied.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Parameters,
    pub v: Parameters,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Clips `grads` to the configured global norm, then applies one Adam step
/// with bias correction and decoupled weight decay on rank-2 tensors.
/// Returns the factor the gradients were scaled by.
pub fn adam_update(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<f64> {
    let clip = match config.grad_clip_norm {
        Some(max) => {
            let norm = grads.global_norm();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let m_corr = 1.0 - b1.powi(t);
    let v_corr = 1.0 - b2.powi(t);
    let lr = config.learning_rate;

    for (name, w) in params.iter_mut() {
        let g = grads.get(name)?;
        let m = state.m.get_mut(name)?;
        if g.shape() != w.shape() {
            return Err(Error::Shape {
                op: "adam_update",
                left: w.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let decay = if w.rank() == 2 { config.weight_decay } else { 0.0 };
        for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = b1 * *mi + (1.0 - b1) * gi * clip;
        }
        let v = state.v.get_mut(name)?;
        for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
            let gc = gi * clip;
            *vi = b2 * *vi + (1.0 - b2) * gc * gc;
        }
        let (m, v) = (state.m.get(name)?, state.v.get(name)?);
        for ((wi, mi), vi) in w.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let m_hat = mi / m_corr;
            let v_hat = vi / v_corr;
            *wi -= lr * (m_hat / (v_hat.sqrt() + config.adam_eps) + decay * *wi);
        }
    }
    Ok(clip)
}

/// Head outputs for every example, in dataset order, without dropout or mixup.
pub fn predict(config: &ModelConfig, params: &Parameters, ds: &Dataset) -> Result<Tensor> {
    let width = config.head.output_width();
    let mut out = Vec::with_capacity(ds.len() * width);
    let mut unused = rng::stream(0, "eval", 0);
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = data::collate(ds, chunk)?;
        let pooled = model::encode(config, params, &batch, false, &mut unused)?.output;
        let head = model::head_forward(params, &pooled)?;
        out.extend_from_slice(head.output.data());
    }
    Tensor::new(vec![ds.len(), width], out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Scores `ds` with its task's metric: argmax for classes, the raw output for
/// regression.
pub fn evaluate(config: &ModelConfig, params: &Parameters, ds: &Dataset) -> Result<EvalResult> {
    if ds.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let outputs = predict(config, params, ds)?;
    let metric = ds.task.metric;
    let value = match ds.task.label_kind {
        LabelKind::Classes { .. } => {
            let pred: Vec<usize> = (0..ds.len()).map(|i| argmax(outputs.row(i))).collect();
            let gold: Vec<usize> = ds
                .examples
                .iter()
                .map(|e| match e.label {
                    data::Label::Class(c) => c,
                    data::Label::Score(_) => usize::MAX,
                })
                .collect();
            match metric {
                Metric::Accuracy => metrics::accuracy(&pred, &gold)?,
                Metric::Matthews => metrics::matthews_corr(&pred, &gold)?,
                Metric::Spearman => {
                    return Err(Error::validation("spearman needs a regression task"))
                }
            }
        }
        LabelKind::Regression { .. } => {
            let gold: Vec<f64> = ds
                .examples
                .iter()
                .map(|e| match e.label {
                    data::Label::Score(s) => s,
                    data::Label::Class(c) => c as f64,
                })
                .collect();
            match metric {
                Metric::Spearman => metrics::spearman_corr(outputs.data(), &gold)?,
                _ => return Err(Error::validation("regression tasks are scored with spearman")),
            }
        }
    };
    Ok(EvalResult {
        metric: metric.name().to_string(),
        value,
        n: ds.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mixup_active: bool,
    /// The fixed λ, or the mean of the λ draws under a Beta policy; absent
    /// when mixup was off for the epoch.
    pub lambda_used: Option<f64>,
    pub mean_train_loss: f64,
    pub dev_metric: EvalResult,
    pub steps: usize,
    pub wall_time_ms: u64,
}

impl EpochReport {
    /// Equality on everything except timing.
    pub fn same_outcome(&self, other: &EpochReport) -> bool {
        self.epoch == other.epoch
            && self.mixup_active == other.mixup_active
            && self.lambda_used.map(f64::to_bits) == other.lambda_used.map(f64::to_bits)
            && self.mean_train_loss.to_bits() == other.mean_train_loss.to_bits()
            && self.dev_metric.metric == other.dev_metric.metric
            && self.dev_metric.value.to_bits() == other.dev_metric.value.to_bits()
            && self.dev_metric.n == other.dev_metric.n
            && self.steps == other.steps
    }
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub params: Parameters,
    pub reports: Vec<EpochReport>,
}

impl TrainingOutcome {
    /// Dev metric of the last epoch.
    pub fn final_metric(&self) -> f64 {
        self.reports.last().map_or(f64::NAN, |r| r.dev_metric.value)
    }

    /// Best dev metric over epochs and the 1-based epoch it came from.
    pub fn best_metric(&self) -> (f64, usize) {
        self.reports
            .iter()
            .fold((f64::NEG_INFINITY, 0), |(best, e), r| {
                if r.dev_metric.value > best {
                    (r.dev_metric.value, r.epoch)
                } else {
                    (best, e)
                }
            })
    }
}

fn check_task(config: &ModelConfig, ds: &Dataset) -> Result<()> {
    if ds.task.head() != config.head {
        return Err(Error::validation(format!(
            "task '{}' needs head {:?} but the model has {:?}",
            ds.task.name,
            ds.task.head(),
            config.head
        )));
    }
    if ds.max_len > config.max_len {
        return Err(Error::validation(format!(
            "dataset max_len {} exceeds model max_len {}",
            ds.max_len, config.max_len
        )));
    }
    Ok(())
}

/// Trains from a fresh initialization (seeded by `model_config.seed`) and
/// evaluates on `dev` after every epoch. Shuffling, dropout and mixup draw
/// from streams derived from `train_config.seed`.
pub fn run_training(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train: &Dataset,
    dev: &Dataset,
) -> Result<TrainingOutcome> {
    let params = model::init_params(model_config)?;
    continue_training(model_config, train_config, params, train, dev)
}

/// [`run_training`] starting from the given parameters.
pub fn continue_training(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut params: Parameters,
    train: &Dataset,
    dev: &Dataset,
) -> Result<TrainingOutcome> {
    model_config.validate()?;
    train_config.validate()?;
    params.check_compatible(model_config)?;
    check_task(model_config, train)?;
    check_task(model_config, dev)?;
    if train.task != dev.task {
        return Err(Error::validation("train and dev sets belong to different tasks"));
    }
    if train.split != Split::Train {
        return Err(Error::validation("training data must be the train split"));
    }
    if train.is_empty() {
        return Err(Error::validation("training set is empty"));
    }

    let seed = train_config.seed;
    let mut dropout_rng = rng::stream(seed, "dropout", 0);
    let mut mixup_rng = rng::stream(seed, "mixup", 0);
    let mut adam = AdamState::new(&params);
    let mut reports = Vec::with_capacity(train_config.epochs);

    for epoch in 1..=train_config.epochs {
        let started = Instant::now();
        let active = mixup::is_active(epoch, train_config.epochs, &train_config.mixup)?;
        let shuffle = rng::derive_seed(seed, "shuffle", epoch as u64);
        let epoch_batches = data::batches(train, train_config.batch_size, Some(shuffle), false)?;

        let mut loss_sum = 0.0;
        let mut lambdas = Vec::new();
        for (step, batch) in epoch_batches.iter().enumerate() {
            let out = train_step(
                model_config,
                &params,
                batch,
                active,
                &train_config.mixup,
                &mut dropout_rng,
                &mut mixup_rng,
            )
            .map_err(|e| e.context(format!("epoch {epoch}, step {}", step + 1)))?;
            if let Some(plan) = &out.plan {
                lambdas.push(plan.lambda);
            }
            loss_sum += out.loss;
            adam_update(&mut params, &out.grads, &mut adam, train_config)?;
        }
        if let Some(name) = params.first_non_finite() {
            return Err(Error::NonFinite(format!("parameter '{name}' after epoch {epoch}")));
        }

        let dev_metric = evaluate(model_config, &params, dev)
            .map_err(|e| e.context(format!("dev evaluation after epoch {epoch}")))?;
        let lambda_used = match (active, &train_config.mixup.lambda) {
            (false, _) => None,
            (true, LambdaPolicy::Fixed { value }) => Some(*value),
            (true, LambdaPolicy::Beta { .. }) => {
                Some(lambdas.iter().sum::<f64>() / lambdas.len() as f64)
            }
        };
        let report = EpochReport {
            epoch,
            mixup_active: active,
            lambda_used,
            mean_train_loss: loss_sum / epoch_batches.len() as f64,
            dev_metric,
            steps: epoch_batches.len(),
            wall_time_ms: started.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4}, dev {} {:.4}{}",
            train_config.epochs,
            report.mean_train_loss,
            report.dev_metric.metric,
            report.dev_metric.value,
            if active { " (mixup)" } else { "" }
        );
        reports.push(report);
    }
    Ok(TrainingOutcome { params, reports })
}
