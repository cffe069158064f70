use serde::{Deserialize, Serialize};

use super::comparison::run_one;
use super::{ExperimentConfig, ExperimentReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{aggregate_seeds, Aggregate, MetricRecord};
use crate::models::ModelKind;
use crate::parallel::try_fan_out;

/// Minority-task results at one majority-task training size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Majority-task training samples kept.
    pub majority_count: usize,
    /// Minority-task training samples.
    pub minority_count: usize,
    /// `majority_count / minority_count`.
    pub ratio: f64,
    pub minority_task: String,
    pub records: Vec<MetricRecord>,
    pub metrics: Vec<Aggregate>,
}

impl SweepPoint {
    pub fn metric(&self, name: &str) -> Option<&Aggregate> {
        self.metrics.iter().find(|a| a.metric == name)
    }

    pub fn values(&self, name: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.metric == name)
            .map(|r| r.value)
            .collect()
    }
}

/// Downsamples the majority task's training samples to each of `counts`
/// (validation and test splits stay fixed) and retrains `kind` with every
/// seed, recording the minority task's test metrics.
pub fn run_imbalance_sweep(
    dataset: &Dataset,
    majority: usize,
    minority: usize,
    counts: &[usize],
    kind: ModelKind,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let tasks = dataset.task_count();
    if majority >= tasks || minority >= tasks || majority == minority {
        return Err(Error::Argument(format!(
            "sweep needs distinct majority and minority tasks among {tasks}, got {majority} and {minority}"
        )));
    }
    if kind == ModelKind::Independent {
        return Err(Error::Argument(
            "the imbalance sweep trains a multi-task model".into(),
        ));
    }
    if counts.is_empty() {
        return Err(Error::Argument(
            "sweep needs at least one majority count".into(),
        ));
    }
    let data = config.prepare(dataset)?;
    let available = data.train.label_counts()[majority];
    if let Some(c) = counts.iter().find(|&&c| c == 0 || c > available) {
        return Err(Error::Argument(format!(
            "majority count {c} outside 1..={available} (training samples of '{}')",
            dataset.task_names[majority]
        )));
    }
    let minority_count = data.train.label_counts()[minority];
    let minority_name = dataset.task_names[minority].clone();
    let jobs: Vec<(usize, u64)> = counts
        .iter()
        .flat_map(|&c| config.train.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let outputs = try_fan_out(&jobs, config.execution, |&(count, seed)| {
        let reduced = data.downsample_train(majority, count, seed)?;
        run_one(kind, &reduced, config, seed)
            .map_err(|e| e.context(format!("sweep point {count}, seed {seed}")))
    })?;

    let mut report = ExperimentReport::new("sweep", config, dataset);
    for (&count, chunk) in counts.iter().zip(outputs.chunks(config.train.seeds.len())) {
        let label = format!("{}@{count}", kind.name());
        let mut point_records = Vec::new();
        for o in chunk {
            for r in &o.records {
                let tagged = MetricRecord {
                    model: label.clone(),
                    ..r.clone()
                };
                if r.task == minority_name {
                    point_records.push(tagged.clone());
                }
                report.records.push(tagged);
            }
            report
                .histories
                .extend(o.histories.iter().cloned().map(|mut h| {
                    h.model = label.clone();
                    h
                }));
        }
        report.sweep.push(SweepPoint {
            majority_count: count,
            minority_count,
            ratio: count as f64 / minority_count as f64,
            minority_task: minority_name.clone(),
            metrics: aggregate_seeds(&point_records),
            records: point_records,
        });
    }
    Ok(report.finish())
}
