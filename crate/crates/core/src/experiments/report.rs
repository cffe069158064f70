use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{ConflictRecorder, CosineStat, DataSource, ExperimentConfig, SweepPoint};
use crate::data::{Dataset, TaskKind};
use crate::error::Result;
use crate::metrics::{
    aggregate_seeds, paired_t_test, values_by_seed, Aggregate, MetricRecord, TTestResult,
};
use crate::training::{TaskEvaluation, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub samples: usize,
    pub feature_dim: usize,
    pub task_names: Vec<String>,
    pub task_kinds: Vec<TaskKind>,
    pub label_counts: Vec<usize>,
}

impl DataSummary {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            samples: dataset.len(),
            feature_dim: dataset.feature_dim(),
            task_names: dataset.task_names.clone(),
            task_kinds: dataset.task_kinds.clone(),
            label_counts: dataset.label_counts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub code_version: String,
    pub seeds: Vec<u64>,
    /// Seconds since the Unix epoch when the study finished.
    pub created_unix: u64,
}

impl Provenance {
    pub fn now(seeds: &[u64]) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: seeds.to_vec(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

/// Paired t-test between two models on one (task, metric), pairing by seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestRow {
    pub task: String,
    pub metric: String,
    pub model_a: String,
    pub model_b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub result: TTestResult,
}

/// One learned relation entry from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub seed: u64,
    /// Task `i`, whose prediction receives the auxiliary term.
    pub target: String,
    /// Task `j`, whose prediction feeds it.
    pub source: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationStat {
    pub target: String,
    pub source: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub model: String,
    pub seed: u64,
    /// Set for single-task runs.
    pub task: Option<String>,
    pub history: TrainHistory,
}

/// Raw test-set predictions behind one run's metrics, in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDump {
    pub model: String,
    pub seed: u64,
    pub task: String,
    pub kind: TaskKind,
    pub targets: Vec<f64>,
    pub predictions: Vec<f64>,
}

impl PredictionDump {
    pub fn new(model: &str, seed: u64, eval: &TaskEvaluation) -> Self {
        Self {
            model: model.to_string(),
            seed,
            task: eval.task.clone(),
            kind: eval.kind,
            targets: eval.targets.clone(),
            predictions: eval.predictions.clone(),
        }
    }
}

/// Outcome of one study. Sections a study does not produce stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// `compare`, `sweep`, `conflict` or `transfer`.
    pub experiment: String,
    pub config: ExperimentConfig,
    pub source: Option<DataSource>,
    pub data: DataSummary,
    pub records: Vec<MetricRecord>,
    pub aggregates: Vec<Aggregate>,
    pub t_tests: Vec<TTestRow>,
    pub relation_records: Vec<RelationRecord>,
    pub relations: Vec<RelationStat>,
    pub sweep: Vec<SweepPoint>,
    pub conflict: Vec<CosineStat>,
    pub conflict_steps: Vec<ConflictRecorder>,
    pub histories: Vec<RunHistory>,
    pub predictions: Vec<PredictionDump>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub(crate) fn new(experiment: &str, config: &ExperimentConfig, dataset: &Dataset) -> Self {
        Self {
            experiment: experiment.to_string(),
            config: config.clone(),
            source: None,
            data: DataSummary::of(dataset),
            records: Vec::new(),
            aggregates: Vec::new(),
            t_tests: Vec::new(),
            relation_records: Vec::new(),
            relations: Vec::new(),
            sweep: Vec::new(),
            conflict: Vec::new(),
            conflict_steps: Vec::new(),
            histories: Vec::new(),
            predictions: Vec::new(),
            provenance: Provenance::now(&config.train.seeds),
        }
    }

    /// Recomputes the aggregates from the per-seed records.
    pub(crate) fn finish(mut self) -> Self {
        self.aggregates = aggregate_seeds(&self.records);
        self
    }

    pub fn aggregate(&self, task: &str, model: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.task == task && a.model == model && a.metric == metric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Paired t-tests of `a` against each of `others` for every (task, metric)
/// that `a` reports, pairing runs by seed. Groups with fewer than two common
/// seeds are skipped.
pub fn paired_tests(records: &[MetricRecord], a: &str, others: &[&str]) -> Result<Vec<TTestRow>> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in records.iter().filter(|r| r.model == a) {
        if !keys.contains(&(r.task.as_str(), r.metric.as_str())) {
            keys.push((&r.task, &r.metric));
        }
    }
    let mut rows = Vec::new();
    for b in others {
        for &(task, metric) in &keys {
            let va = values_by_seed(records, task, a, metric);
            let vb = values_by_seed(records, task, b, metric);
            let (xa, xb): (Vec<f64>, Vec<f64>) = va
                .iter()
                .filter_map(|(s, x)| vb.iter().find(|(t, _)| t == s).map(|(_, y)| (*x, *y)))
                .unzip();
            if xa.len() < 2 {
                if !vb.is_empty() {
                    log::warn!(
                        "{metric} on {task}: fewer than 2 paired seeds for {a} vs {b}; no t-test"
                    );
                }
                continue;
            }
            rows.push(TTestRow {
                task: task.to_string(),
                metric: metric.to_string(),
                model_a: a.to_string(),
                model_b: b.to_string(),
                mean_a: crate::metrics::mean(&xa),
                mean_b: crate::metrics::mean(&xb),
                result: paired_t_test(&xa, &xb)?,
            });
        }
    }
    Ok(rows)
}
