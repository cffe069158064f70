//! The training loop: masked multi-task batches, Adam, plateau learning-rate
//! schedule and early stopping with best-epoch restoration.

mod history;
mod schedule;
mod transfer;

use serde::{Deserialize, Serialize};

pub use history::{EpochRecord, TrainHistory};
pub use schedule::{
    early_stop_check, reduce_lr_on_plateau, EarlyStopState, PlateauScheduler, SchedulerConfig,
    StopDecision,
};
pub use transfer::{pretrain_and_transfer, TransferOutcome};

use crate::data::{batch_plan, Batch, Dataset, TargetScaler, TaskKind};
use crate::error::{Error, Result};
use crate::losses::{batch_loss, LossKind, TaskLoss, TaskWeights};
use crate::metrics::{
    classification_metrics, regression_metrics, roc_auc, ClassificationMetrics, RegressionMetrics,
};
use crate::models::Network;
use crate::numeric::{adam_step, AdamState, Matrix, Mode};
use crate::{rng_for, SeededRng};

/// Generator stream for parameter initialization.
pub const INIT_STREAM: u64 = 0x1417_0000_0000_0001;
/// Generator stream for dropout masks.
pub const DROPOUT_STREAM: u64 = 0xd80f_0000_0000_0002;
/// Rows per forward pass when predicting.
pub const PREDICT_CHUNK: usize = 4096;

/// Generator for initializing a model trained with `seed`.
pub fn init_rng(seed: u64) -> SeededRng {
    rng_for(seed, INIT_STREAM)
}

/// How per-task loss weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskWeighting {
    Uniform,
    /// `n_max / n_t` from training-split label counts.
    InverseFrequency,
    Fixed(Vec<f64>),
}

impl TaskWeighting {
    /// Weights for `train`. A single-task dataset always gets weight 1.
    pub fn resolve(&self, train: &Dataset) -> Result<TaskWeights> {
        let tasks = train.task_count();
        if tasks == 1 {
            return Ok(TaskWeights::uniform(1));
        }
        match self {
            TaskWeighting::Uniform => Ok(TaskWeights::uniform(tasks)),
            TaskWeighting::InverseFrequency => {
                TaskWeights::inverse_frequency(&train.label_counts())
            }
            TaskWeighting::Fixed(w) if w.len() == tasks => TaskWeights::new(w.clone()),
            TaskWeighting::Fixed(w) => Err(Error::Config(format!(
                "{} fixed task weights given for {tasks} tasks",
                w.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub weight_decay: f64,
    pub scheduler: SchedulerConfig,
    pub seeds: Vec<u64>,
    pub task_weighting: TaskWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            early_stop_patience: 30,
            weight_decay: 1e-5,
            scheduler: SchedulerConfig::default(),
            seeds: vec![42, 123, 456, 789, 1024],
            task_weighting: TaskWeighting::InverseFrequency,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning_rate must be positive and weight_decay non-negative".into(),
            ));
        }
        if self.batch_size < 2 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config(
                "batch_size must be at least 2; max_epochs and early_stop_patience at least 1"
                    .into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.scheduler.validate()
    }
}

/// What an observer sees at each optimization step, before the update.
pub struct Step<'a, M: Network> {
    pub epoch: usize,
    /// 0-based within the epoch.
    pub step: usize,
    pub model: &'a M,
    pub cache: &'a M::Cache,
    pub batch: &'a Batch,
    /// Unweighted masked loss and its gradient for each task.
    pub task_losses: &'a [TaskLoss],
}

/// Hook into the training loop (gradient diagnostics and the like).
pub trait StepObserver<M: Network> {
    fn observe(&mut self, step: &Step<'_, M>) -> Result<()>;
}

/// Batches for one epoch; a trailing single sample joins the previous batch
/// so that batch normalization always sees at least two rows.
pub fn epoch_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut plan = batch_plan(n, batch_size, true, seed, epoch as u64)?;
    if plan.len() > 1 && plan.last().is_some_and(|b| b.len() == 1) {
        let last = plan.pop().expect("non-empty plan");
        plan.last_mut().expect("two batches").extend(last);
    }
    Ok(plan)
}

fn loss_kinds(kinds: &[TaskKind]) -> Vec<LossKind> {
    kinds.iter().map(|k| k.loss()).collect()
}

fn check_tasks<M: Network>(model: &M, dataset: &Dataset) -> Result<()> {
    if model.task_kinds() != dataset.task_kinds.as_slice() {
        return Err(Error::Dimension {
            context: "model tasks vs dataset tasks",
            expected: model.task_count(),
            found: dataset.task_count(),
        });
    }
    Ok(())
}

/// Eval-mode predictions in output space, computed in chunks.
pub fn predict<M: Network>(model: &mut M, features: &Matrix) -> Result<Matrix> {
    let mut rng = rng_for(0, 0);
    let mut out = Matrix::zeros(features.rows(), model.task_count());
    let mut start = 0;
    while start < features.rows() {
        let end = (start + PREDICT_CHUNK).min(features.rows());
        let rows: Vec<usize> = (start..end).collect();
        let (preds, _) = model.forward(&features.select_rows(&rows), Mode::Eval, &mut rng)?;
        for (k, r) in rows.into_iter().enumerate() {
            out.row_mut(r).copy_from_slice(preds.row(k));
        }
        start = end;
    }
    Ok(out)
}

/// Task-weighted masked loss over a whole dataset in eval mode, with the
/// per-task unweighted losses.
pub fn dataset_loss<M: Network>(
    model: &mut M,
    dataset: &Dataset,
    weights: &TaskWeights,
) -> Result<(f64, Vec<TaskLoss>)> {
    check_tasks(model, dataset)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let batch = Batch::gather(dataset, &all);
    let preds = predict(model, &batch.features)?;
    let (value, _, losses) = batch_loss(
        &preds,
        &batch.targets,
        &batch.mask,
        &loss_kinds(&dataset.task_kinds),
        weights,
    )?;
    Ok((value, losses))
}

fn diagnostic(epoch: usize, step: usize, batch: &Batch, losses: &[TaskLoss], total: f64) -> String {
    let per_task: Vec<String> = losses
        .iter()
        .map(|l| format!("{} ({} labeled)", l.value, l.labeled))
        .collect();
    let bad_rows: Vec<usize> = (0..batch.len())
        .filter(|&r| batch.features.row(r).iter().any(|x| !x.is_finite()))
        .map(|r| batch.indices[r])
        .collect();
    format!(
        "loss {total} at epoch {epoch}, step {step}; task losses [{}]; sample indices {:?}; rows with non-finite features {:?}",
        per_task.join(", "),
        batch.indices,
        bad_rows
    )
}

fn validation_metric(kind: TaskKind, preds: &[f64], targets: &[f64]) -> Option<f64> {
    if preds.len() < 2 {
        return None;
    }
    let v = match kind {
        TaskKind::Regression => {
            let mean = targets.iter().sum::<f64>() / targets.len() as f64;
            if targets.iter().all(|&y| y == mean) {
                return None;
            }
            regression_metrics(preds, targets).ok()?.r2
        }
        TaskKind::Classification => {
            let labels: Vec<bool> = targets.iter().map(|&y| y == 1.0).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                return None;
            }
            roc_auc(preds, &labels)
        }
    };
    v.is_finite().then_some(v)
}

/// Trains `model` and returns the parameters of the best validation epoch.
pub fn train<M: Network>(
    model: M,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<(M, TrainHistory)> {
    train_observed(model, train, val, config, seed, None)
}

/// [`train`] with an optional per-step observer.
pub fn train_observed<M: Network>(
    mut model: M,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    seed: u64,
    mut observer: Option<&mut dyn StepObserver<M>>,
) -> Result<(M, TrainHistory)> {
    config.validate()?;
    check_tasks(&model, train)?;
    check_tasks(&model, val)?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Argument(format!(
            "training needs at least 2 training and 1 validation samples, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    let weights = config.task_weighting.resolve(train)?;
    let kinds = loss_kinds(&train.task_kinds);
    let mut adam = AdamState::new(model.params());
    let mut scheduler = PlateauScheduler::new(config.learning_rate, config.scheduler);
    let mut early = EarlyStopState::new(config.early_stop_patience);
    let mut dropout_rng = rng_for(seed, DROPOUT_STREAM);

    let val_all: Vec<usize> = (0..val.len()).collect();
    let val_batch = Batch::gather(val, &val_all);

    let mut epochs = Vec::new();
    let mut early_stopped = false;
    for epoch in 1..=config.max_epochs {
        let lr = scheduler.learning_rate;
        let mut loss_sum = 0.0;
        let plan = epoch_batches(train.len(), config.batch_size, seed, epoch)?;
        for (step, indices) in plan.iter().enumerate() {
            let batch = Batch::gather(train, indices);
            let (preds, cache) = model.forward(&batch.features, Mode::Train, &mut dropout_rng)?;
            let (data_loss, grad, losses) =
                match batch_loss(&preds, &batch.targets, &batch.mask, &kinds, &weights) {
                    Ok(r) => r,
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::NonFinite(diagnostic(
                            epoch,
                            step,
                            &batch,
                            &[],
                            f64::NAN,
                        )));
                    }
                    Err(e) => return Err(e),
                };
            let total = data_loss + model.auxiliary_loss(&cache);
            if !total.is_finite() {
                return Err(Error::NonFinite(diagnostic(
                    epoch, step, &batch, &losses, total,
                )));
            }
            let grads = model.backward(&cache, &grad, true)?;
            if let Some(obs) = observer.as_deref_mut() {
                obs.observe(&Step {
                    epoch,
                    step,
                    model: &model,
                    cache: &cache,
                    batch: &batch,
                    task_losses: &losses,
                })?;
            }
            drop(cache);
            if let Err(e) = adam_step(
                &mut model.params_mut(),
                &grads,
                &mut adam,
                lr,
                config.weight_decay,
            ) {
                return Err(match e {
                    Error::NonFinite(what) => Error::NonFinite(format!(
                        "{what}; {}",
                        diagnostic(epoch, step, &batch, &losses, total)
                    )),
                    other => other.context(format!("epoch {epoch}, step {step}")),
                });
            }
            loss_sum += total;
        }

        let val_preds = predict(&mut model, &val_batch.features)?;
        let (val_loss, _, val_losses) = batch_loss(
            &val_preds,
            &val_batch.targets,
            &val_batch.mask,
            &kinds,
            &weights,
        )?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss {val_loss} at epoch {epoch}"
            )));
        }
        let task_val_metric = (0..val.task_count())
            .map(|t| {
                let (p, y): (Vec<f64>, Vec<f64>) = (0..val.len())
                    .filter(|&r| val_batch.mask[t][r])
                    .map(|r| (val_preds.get(r, t), val_batch.targets.get(r, t)))
                    .unzip();
                validation_metric(val.task_kinds[t], &p, &y)
            })
            .collect();
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / plan.len() as f64,
            val_loss,
            learning_rate: lr,
            task_val_loss: val_losses
                .iter()
                .map(|l| (!l.is_zero_contribution()).then_some(l.value))
                .collect(),
            task_val_metric,
        });
        log::debug!(
            "seed {seed} epoch {epoch}: train {:.5} val {val_loss:.5} lr {lr:e}",
            loss_sum / plan.len() as f64
        );
        scheduler.step(val_loss);
        if early.check(epoch, val_loss, &model) == StopDecision::Stop {
            early_stopped = true;
            break;
        }
    }
    let history = TrainHistory {
        task_names: train.task_names.clone(),
        stopped_epoch: epochs.len(),
        best_epoch: early.best_epoch,
        early_stopped,
        epochs,
    };
    let best = early.best_parameters.expect("at least one epoch ran");
    Ok((best, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskMetrics {
    Regression(RegressionMetrics),
    Classification(ClassificationMetrics),
}

impl TaskMetrics {
    /// `(name, value)` pairs in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        match self {
            TaskMetrics::Regression(m) => vec![("r2", m.r2), ("rmse", m.rmse), ("mae", m.mae)],
            TaskMetrics::Classification(m) => {
                vec![
                    ("accuracy", m.accuracy),
                    ("f1", m.f1),
                    ("auc", m.auc),
                    ("recall", m.recall),
                ]
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.named()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v)
    }
}

/// Test-set results for one task: metrics plus the raw predictions behind
/// them, in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub task: String,
    pub kind: TaskKind,
    pub targets: Vec<f64>,
    /// Probabilities for classification tasks.
    pub predictions: Vec<f64>,
    pub metrics: TaskMetrics,
}

/// Evaluates every task on its labeled samples of `dataset`; tasks without
/// labels are skipped.
pub fn evaluate<M: Network>(
    model: &mut M,
    dataset: &Dataset,
    scaler: &TargetScaler,
) -> Result<Vec<TaskEvaluation>> {
    check_tasks(model, dataset)?;
    let preds = predict(model, &dataset.features())?;
    let mut out = Vec::new();
    for t in 0..dataset.task_count() {
        let (targets, predictions): (Vec<f64>, Vec<f64>) = dataset
            .samples
            .iter()
            .enumerate()
            .filter_map(|(r, s)| {
                s.targets[t].map(|y| (scaler.invert(t, y), scaler.invert(t, preds.get(r, t))))
            })
            .unzip();
        if targets.is_empty() {
            continue;
        }
        let kind = dataset.task_kinds[t];
        let metrics = match kind {
            TaskKind::Regression => {
                TaskMetrics::Regression(regression_metrics(&predictions, &targets)?)
            }
            TaskKind::Classification => {
                TaskMetrics::Classification(classification_metrics(&predictions, &targets)?)
            }
        };
        out.push(TaskEvaluation {
            task: dataset.task_names[t].clone(),
            kind,
            targets,
            predictions,
            metrics,
        });
    }
    Ok(out)
}
