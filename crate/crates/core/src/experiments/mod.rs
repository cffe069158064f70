//! The benchmark studies: the three-way model comparison with relation
//! extraction, the imbalance sweep, gradient-conflict analysis and the
//! pre-train-and-transfer study.

mod comparison;
mod conflict;
mod report;
mod sweep;
mod transfer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use comparison::{extract_task_relations, run_comparison, run_main_comparison};
pub use conflict::{run_gradient_conflict, ConflictRecorder, CosineStat};
pub use report::{
    paired_tests, DataSummary, ExperimentReport, PredictionDump, Provenance, RelationRecord,
    RelationStat, RunHistory, TTestRow,
};
pub use sweep::{run_imbalance_sweep, SweepPoint};
pub use transfer::{run_transfer_utility, SCRATCH_ARM, TRANSFER_ARM};

use crate::data::{Prepared, SplitRatios, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::MetricRecord;
use crate::models::ModelConfig;
use crate::parallel::Execution;
use crate::training::{TaskEvaluation, TrainConfig};

/// Everything besides the data needed to re-run a study exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitRatios,
    pub split_seed: u64,
    /// Record gradient cosines every `conflict_stride` eligible steps.
    pub conflict_stride: usize,
    /// Scheduling only; results do not depend on it.
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitRatios::default(),
            split_seed: 42,
            conflict_stride: 1,
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.regularization.validate()?;
        if self.conflict_stride == 0 {
            return Err(Error::Config("conflict_stride must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.model.dropout
            )));
        }
        Ok(())
    }

    pub(crate) fn prepare(&self, dataset: &crate::data::Dataset) -> Result<Prepared> {
        self.validate()?;
        Prepared::new(dataset, self.split, self.split_seed)
    }
}

/// Where a study's data came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf },
    Synthetic(SyntheticSpec),
}

/// Metric records for one evaluated task; undefined metrics are skipped.
pub(crate) fn records_for(model: &str, seed: u64, eval: &TaskEvaluation) -> Vec<MetricRecord> {
    eval.metrics
        .named()
        .into_iter()
        .filter_map(|(name, value)| {
            let r = MetricRecord::new(&eval.task, model, seed, name, value);
            if r.is_err() {
                log::warn!(
                    "{name} of {model} on {} (seed {seed}) is undefined; not recorded",
                    eval.task
                );
            }
            r.ok()
        })
        .collect()
}

/// Spearman rank correlation with midranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            for &k in &order[i..=j] {
                out[k] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        out
    }
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    crate::numeric::cosine(
        &ra.iter()
            .map(|r| r - crate::metrics::mean(&ra))
            .collect::<Vec<_>>(),
        &rb.iter()
            .map(|r| r - crate::metrics::mean(&rb))
            .collect::<Vec<_>>(),
    )
}
