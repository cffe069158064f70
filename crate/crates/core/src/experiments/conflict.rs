use serde::{Deserialize, Serialize};

use super::comparison::RunOutput;
use super::report::{PredictionDump, RunHistory};
use super::{records_for, ExperimentConfig, ExperimentReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{mean, sample_std, MetricRecord};
use crate::models::{ModelKind, Network, SharedMtlModel, StructuredMtlModel};
use crate::numeric::{cosine, Matrix};
use crate::parallel::try_fan_out;
use crate::training::{evaluate, init_rng, train_observed, Step, StepObserver};

/// Records, at every eligible step, the cosine between each pair of tasks'
/// loss gradients with respect to the shared backbone. A step is eligible
/// when at least two tasks have a labeled sample in the batch. Self-pairs
/// are recorded as a harness check and must read exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecorder {
    pub seed: u64,
    pub task_names: Vec<String>,
    pub stride: usize,
    pub eligible_steps: usize,
    /// `cosines[a][b]`: one value per recorded step where both were labeled.
    pub cosines: Vec<Vec<Vec<f64>>>,
}

impl ConflictRecorder {
    pub fn new(seed: u64, task_names: &[String], stride: usize) -> Self {
        let t = task_names.len();
        Self {
            seed,
            task_names: task_names.to_vec(),
            stride: stride.max(1),
            eligible_steps: 0,
            cosines: vec![vec![Vec::new(); t]; t],
        }
    }

    /// Backbone gradient of each task's unweighted loss; `None` for tasks
    /// without labels in the batch.
    pub fn backbone_gradients<M: Network>(step: &Step<'_, M>) -> Result<Vec<Option<Vec<f64>>>> {
        let groups = step.model.backbone_groups();
        if groups == 0 {
            return Err(Error::Argument(
                "gradient conflict needs a model with a trainable shared backbone".into(),
            ));
        }
        let rows = step.batch.len();
        let t = step.task_losses.len();
        step.task_losses
            .iter()
            .enumerate()
            .map(|(task, loss)| {
                if loss.is_zero_contribution() {
                    return Ok(None);
                }
                let mut g = Matrix::zeros(rows, t);
                g.set_column(task, &loss.grad);
                let grads = step.model.backward(step.cache, &g, false)?;
                Ok(Some(
                    grads[..groups]
                        .iter()
                        .flat_map(|m| m.as_slice().iter().copied())
                        .collect(),
                ))
            })
            .collect()
    }
}

impl<M: Network> StepObserver<M> for ConflictRecorder {
    fn observe(&mut self, step: &Step<'_, M>) -> Result<()> {
        let labeled = step
            .task_losses
            .iter()
            .filter(|l| !l.is_zero_contribution())
            .count();
        if labeled < 2 {
            return Ok(());
        }
        self.eligible_steps += 1;
        if (self.eligible_steps - 1) % self.stride != 0 {
            return Ok(());
        }
        let grads = Self::backbone_gradients(step)?;
        for (a, ga) in grads.iter().enumerate() {
            for (b, gb) in grads.iter().enumerate().skip(a) {
                if let (Some(ga), Some(gb)) = (ga, gb) {
                    if let Some(c) = cosine(ga, gb) {
                        self.cosines[a][b].push(c);
                        if a != b {
                            self.cosines[b][a].push(c);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Cosine statistics for one ordered task pair over all recorded steps of
/// all seeds. `mean` and `std` are `None` when the pair never co-occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineStat {
    pub task_a: String,
    pub task_b: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub steps: usize,
    pub n_seeds: usize,
}

pub(crate) fn cosine_stats(recorders: &[ConflictRecorder]) -> Vec<CosineStat> {
    let Some(first) = recorders.first() else {
        return Vec::new();
    };
    let t = first.task_names.len();
    let mut out = Vec::with_capacity(t * t);
    for a in 0..t {
        for b in 0..t {
            let values: Vec<f64> = recorders
                .iter()
                .flat_map(|r| r.cosines[a][b].iter().copied())
                .collect();
            let seeds = recorders
                .iter()
                .filter(|r| !r.cosines[a][b].is_empty())
                .count();
            if values.is_empty() && a != b {
                log::warn!(
                    "tasks '{}' and '{}' never shared a batch; no cosine data",
                    first.task_names[a],
                    first.task_names[b]
                );
            }
            out.push(CosineStat {
                task_a: first.task_names[a].clone(),
                task_b: first.task_names[b].clone(),
                mean: (!values.is_empty()).then(|| mean(&values)),
                std: (!values.is_empty()).then(|| sample_std(&values)),
                steps: values.len(),
                n_seeds: seeds,
            });
        }
    }
    out
}

fn observed_run<M: Network>(
    model: M,
    data: &crate::data::Prepared,
    config: &ExperimentConfig,
    seed: u64,
    kind: ModelKind,
) -> Result<(RunOutput, ConflictRecorder)> {
    let mut recorder = ConflictRecorder::new(seed, &data.train.task_names, config.conflict_stride);
    let (mut model, history) = train_observed(
        model,
        &data.train,
        &data.val,
        &config.train,
        seed,
        Some(&mut recorder),
    )?;
    let evals = evaluate(&mut model, &data.test, &data.scaler)?;
    let mut out = RunOutput::default();
    for e in &evals {
        out.records.extend(records_for(kind.name(), seed, e));
        out.predictions
            .push(PredictionDump::new(kind.name(), seed, e));
    }
    out.histories.push(RunHistory {
        model: kind.name().to_string(),
        seed,
        task: None,
        history,
    });
    Ok((out, recorder))
}

/// Trains a multi-task model with every seed while recording backbone
/// gradient cosines between tasks.
pub fn run_gradient_conflict(
    dataset: &Dataset,
    kind: ModelKind,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    if dataset.task_count() < 2 {
        return Err(Error::Argument(
            "gradient conflict needs at least 2 tasks".into(),
        ));
    }
    let data = config.prepare(dataset)?;
    let dim = data.train.feature_dim();
    let kinds = &data.train.task_kinds;
    let runs = try_fan_out(&config.train.seeds, config.execution, |&seed| {
        match kind {
            ModelKind::StandardMtl => observed_run(
                SharedMtlModel::new(dim, kinds, &config.model, &mut init_rng(seed)),
                &data,
                config,
                seed,
                kind,
            ),
            ModelKind::StructuredMtl => observed_run(
                StructuredMtlModel::new(dim, kinds, &config.model, &mut init_rng(seed))?,
                &data,
                config,
                seed,
                kind,
            ),
            ModelKind::Independent => Err(Error::Argument(
                "independent models share no backbone".into(),
            )),
        }
        .map_err(|e| e.context(format!("conflict run with seed {seed}")))
    })?;
    let mut report = ExperimentReport::new("conflict", config, dataset);
    for (out, recorder) in runs {
        report.records.extend(out.records);
        report.histories.extend(out.histories);
        report.predictions.extend(out.predictions);
        let t = recorder.task_names.len();
        for a in 0..t {
            for b in (a + 1)..t {
                let v = &recorder.cosines[a][b];
                if !v.is_empty() {
                    let pair = format!("{}|{}", recorder.task_names[a], recorder.task_names[b]);
                    report.records.push(MetricRecord::new(
                        &pair,
                        kind.name(),
                        recorder.seed,
                        "cosine",
                        mean(v),
                    )?);
                }
            }
        }
        report.conflict_steps.push(recorder);
    }
    report.conflict = cosine_stats(&report.conflict_steps);
    Ok(report.finish())
}
