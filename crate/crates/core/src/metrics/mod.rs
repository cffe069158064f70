//! Evaluation metrics, seed aggregation and paired significance tests.

mod scores;
mod ttest;

use serde::{Deserialize, Serialize};

pub use scores::{
    classification_metrics, regression_metrics, roc_auc, ClassificationMetrics, RegressionMetrics,
    THRESHOLD,
};
pub use ttest::{
    ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_two_tailed, TTestResult, ALPHA,
};

use crate::error::{Error, Result};

/// One metric value from one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task: String,
    pub model: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(task: &str, model: &str, seed: u64, metric: &str, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{metric} of {model} on {task} (seed {seed})"
            )));
        }
        Ok(Self {
            task: task.to_string(),
            model: model.to_string(),
            seed,
            metric: metric.to_string(),
            value,
        })
    }
}

/// Mean and sample standard deviation of one (task, model, metric) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task: String,
    pub model: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

/// Arithmetic mean, accumulated as offsets from the first value so that
/// equal inputs reproduce themselves exactly.
pub fn mean(values: &[f64]) -> f64 {
    let Some(&first) = values.first() else {
        return f64::NAN;
    };
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

/// Sample (n − 1) standard deviation; 0 for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Pooled standard deviation of two equally weighted groups.
pub fn pooled_std(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (sample_std(a), sample_std(b));
    ((sa * sa + sb * sb) / 2.0).sqrt()
}

/// Groups records by (task, model, metric) in order of first appearance.
pub fn aggregate_seeds(records: &[MetricRecord]) -> Vec<Aggregate> {
    let mut groups: Vec<((&str, &str, &str), Vec<f64>)> = Vec::new();
    for r in records {
        let key = (r.task.as_str(), r.model.as_str(), r.metric.as_str());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, values)) => values.push(r.value),
            None => groups.push((key, vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|((task, model, metric), values)| {
            if values.len() == 1 {
                log::warn!("{metric} of {model} on {task} has a single seed; reporting std 0");
            }
            Aggregate {
                task: task.to_string(),
                model: model.to_string(),
                metric: metric.to_string(),
                mean: mean(&values),
                std: sample_std(&values),
                n_seeds: values.len(),
            }
        })
        .collect()
}

/// Values of one (task, model, metric) group ordered by seed.
pub fn values_by_seed(
    records: &[MetricRecord],
    task: &str,
    model: &str,
    metric: &str,
) -> Vec<(u64, f64)> {
    let mut out: Vec<(u64, f64)> = records
        .iter()
        .filter(|r| r.task == task && r.model == model && r.metric == metric)
        .map(|r| (r.seed, r.value))
        .collect();
    out.sort_by_key(|(s, _)| *s);
    out
}
