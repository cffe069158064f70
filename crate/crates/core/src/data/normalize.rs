use serde::{Deserialize, Serialize};

use super::{Dataset, TaskKind};
use crate::error::{Error, Result};

/// Per-feature standardization fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero-variance columns get 1.
    pub std: Vec<f64>,
    /// Columns whose variance was zero.
    pub flagged: Vec<usize>,
}

/// Fits feature means and population standard deviations on `train`.
pub fn fit_normalize(train: &Dataset) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::Argument(
            "cannot fit normalization on an empty dataset".into(),
        ));
    }
    let dim = train.feature_dim();
    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in &train.samples {
        for (m, x) in mean.iter_mut().zip(&s.features) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in &train.samples {
        for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let mut flagged = Vec::new();
    let std = var
        .iter()
        .enumerate()
        .map(|(c, v)| {
            let sd = (v / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                flagged.push(c);
                1.0
            }
        })
        .collect();
    if !flagged.is_empty() {
        log::warn!("zero-variance feature columns {flagged:?}: std forced to 1");
    }
    Ok(NormalizationStats { mean, std, flagged })
}

impl NormalizationStats {
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.feature_dim() != self.mean.len() && !dataset.is_empty() {
            return Err(Error::Dimension {
                context: "normalization",
                expected: self.mean.len(),
                found: dataset.feature_dim(),
            });
        }
        let mut out = dataset.clone();
        for s in &mut out.samples {
            for ((x, m), sd) in s.features.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / sd;
            }
        }
        Ok(out)
    }
}

/// Standardizes regression targets with training-split statistics.
/// Classification labels pass through untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    /// `(mean, std)` per task; `None` for classification tasks.
    pub tasks: Vec<Option<(f64, f64)>>,
}

impl TargetScaler {
    pub fn fit(train: &Dataset) -> Self {
        let tasks = train
            .task_kinds
            .iter()
            .enumerate()
            .map(|(t, kind)| {
                if *kind == TaskKind::Classification {
                    return None;
                }
                let values: Vec<f64> = train.samples.iter().filter_map(|s| s.targets[t]).collect();
                if values.is_empty() {
                    return Some((0.0, 1.0));
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                Some((mean, if sd > 0.0 { sd } else { 1.0 }))
            })
            .collect();
        Self { tasks }
    }

    pub fn identity(kinds: &[TaskKind]) -> Self {
        Self {
            tasks: kinds
                .iter()
                .map(|k| (*k == TaskKind::Regression).then_some((0.0, 1.0)))
                .collect(),
        }
    }

    pub fn apply(&self, dataset: &Dataset) -> Dataset {
        let mut out = dataset.clone();
        for s in &mut out.samples {
            for (t, scale) in s.targets.iter_mut().zip(&self.tasks) {
                if let (Some(v), Some((m, sd))) = (t.as_mut(), scale) {
                    *v = (*v - m) / sd;
                }
            }
        }
        out
    }

    /// The scaler of a single task, for single-task views of a dataset.
    pub fn select(&self, task: usize) -> TargetScaler {
        TargetScaler {
            tasks: vec![self.tasks[task]],
        }
    }

    /// Maps a standardized prediction for `task` back to original units.
    pub fn invert(&self, task: usize, value: f64) -> f64 {
        match self.tasks[task] {
            Some((m, sd)) => value * sd + m,
            None => value,
        }
    }
}
