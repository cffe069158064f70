//! Union datasets: samples carrying a subset of task labels, plus the
//! ingestion, normalization, splitting and batching around them.

mod batch;
mod csv_io;
mod normalize;
mod prepare;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use batch::{batch_plan, Batch, BatchIter};
pub use csv_io::{load_csv, write_csv, Schema, ALLOY_FEATURES, ALLOY_TARGETS};
pub use normalize::{fit_normalize, NormalizationStats, TargetScaler};
pub use prepare::Prepared;
pub use split::{stratified_split, Split, SplitIndices, SplitRatios, REGRESSION_BINS};
pub use synthetic::{generate_synthetic, SyntheticSpec, Teachers};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

impl TaskKind {
    pub fn loss(self) -> crate::losses::LossKind {
        match self {
            TaskKind::Regression => crate::losses::LossKind::Mse,
            TaskKind::Classification => crate::losses::LossKind::Bce,
        }
    }
}

/// One row of a union dataset. A task's mask bit is `targets[t].is_some()`,
/// so a label can never be fabricated where the mask is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub targets: Vec<Option<f64>>,
}

impl Sample {
    pub fn mask(&self) -> Vec<bool> {
        self.targets.iter().map(Option::is_some).collect()
    }

    pub fn has(&self, task: usize) -> bool {
        self.targets[task].is_some()
    }
}

/// Ordered samples with task metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub task_names: Vec<String>,
    pub task_kinds: Vec<TaskKind>,
}

impl Dataset {
    /// Validates shapes and the at-least-one-label rule.
    pub fn new(
        samples: Vec<Sample>,
        task_names: Vec<String>,
        task_kinds: Vec<TaskKind>,
    ) -> Result<Self> {
        if task_names.len() != task_kinds.len() {
            return Err(Error::Dimension {
                context: "task metadata",
                expected: task_names.len(),
                found: task_kinds.len(),
            });
        }
        let dim = samples.first().map(|s| s.features.len());
        for (i, s) in samples.iter().enumerate() {
            if Some(s.features.len()) != dim {
                return Err(Error::Dimension {
                    context: "sample features",
                    expected: dim.unwrap_or(0),
                    found: s.features.len(),
                });
            }
            if s.targets.len() != task_names.len() {
                return Err(Error::Dimension {
                    context: "sample targets",
                    expected: task_names.len(),
                    found: s.targets.len(),
                });
            }
            if s.targets.iter().all(Option::is_none) {
                return Err(Error::Argument(format!("sample {i} carries no label")));
            }
        }
        Ok(Self {
            samples,
            task_names,
            task_kinds,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn task_count(&self) -> usize {
        self.task_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.task_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Argument(format!("unknown task '{name}'")))
    }

    /// Number of samples labeled for each task.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.task_count()];
        for s in &self.samples {
            for (c, t) in counts.iter_mut().zip(&s.targets) {
                *c += usize::from(t.is_some());
            }
        }
        counts
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            task_names: self.task_names.clone(),
            task_kinds: self.task_kinds.clone(),
        }
    }

    /// The samples labeled for `task`, reduced to that single task.
    pub fn single_task(&self, task: usize) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| s.has(task))
                .map(|s| Sample {
                    features: s.features.clone(),
                    targets: vec![s.targets[task]],
                })
                .collect(),
            task_names: vec![self.task_names[task].clone()],
            task_kinds: vec![self.task_kinds[task]],
        }
    }

    pub fn features(&self) -> Matrix {
        let dim = self.feature_dim();
        let mut data = Vec::with_capacity(self.len() * dim);
        for s in &self.samples {
            data.extend_from_slice(&s.features);
        }
        Matrix::from_vec(self.len(), dim, data).expect("uniform feature width")
    }

    /// `(targets, mask)` for one task; missing targets read as 0.
    pub fn task_column(&self, task: usize) -> (Vec<f64>, Vec<bool>) {
        self.samples
            .iter()
            .map(|s| (s.targets[task].unwrap_or(0.0), s.targets[task].is_some()))
            .unzip()
    }

    /// Uniformly keeps `n` of the samples labeled for `task`; every sample
    /// lacking that label is retained. Original order is preserved.
    pub fn downsample_task(&self, task: usize, n: usize, seed: u64) -> Result<Dataset> {
        let labeled: Vec<usize> = (0..self.len())
            .filter(|&i| self.samples[i].has(task))
            .collect();
        if n == 0 || n > labeled.len() {
            return Err(Error::Argument(format!(
                "cannot keep {n} samples of task '{}' ({} available, minimum 1)",
                self.task_names.get(task).map_or("?", String::as_str),
                labeled.len()
            )));
        }
        let mut rng = crate::rng_for(seed, 0x00d0_5a3e);
        let mut keep = vec![true; self.len()];
        for &i in &labeled {
            keep[i] = false;
        }
        for pick in rand::seq::index::sample(&mut rng, labeled.len(), n) {
            keep[labeled[pick]] = true;
        }
        let indices: Vec<usize> = (0..self.len()).filter(|&i| keep[i]).collect();
        Ok(self.subset(&indices))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let mut samples = Vec::new();
        for i in 0..30 {
            let t = if i < 20 {
                vec![Some(i as f64), None]
            } else {
                vec![None, Some((i % 2) as f64)]
            };
            samples.push(Sample {
                features: vec![i as f64, 1.0],
                targets: t,
            });
        }
        Dataset::new(
            samples,
            vec!["a".into(), "b".into()],
            vec![TaskKind::Regression, TaskKind::Classification],
        )
        .unwrap()
    }

    #[test]
    fn rejects_unlabeled_samples() {
        let s = Sample {
            features: vec![0.0],
            targets: vec![None],
        };
        assert!(Dataset::new(vec![s], vec!["a".into()], vec![TaskKind::Regression]).is_err());
    }

    #[test]
    fn downsampling_keeps_other_tasks() {
        let ds = toy();
        let down = ds.downsample_task(0, 5, 3).unwrap();
        assert_eq!(down.label_counts(), vec![5, 10]);
        let others: Vec<&Sample> = ds.samples.iter().filter(|s| !s.has(0)).collect();
        let kept: Vec<&Sample> = down.samples.iter().filter(|s| !s.has(0)).collect();
        assert_eq!(others, kept);

        assert_eq!(ds.downsample_task(0, 20, 3).unwrap(), ds);
        assert!(matches!(
            ds.downsample_task(0, 0, 3),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            ds.downsample_task(0, 21, 3),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn downsampling_to_alloy_ratio() {
        let samples = (0..2_800)
            .map(|i| Sample {
                features: vec![i as f64],
                targets: if i < 2_000 {
                    vec![Some(1.0), None]
                } else {
                    vec![None, Some(2.0)]
                },
            })
            .collect();
        let ds = Dataset::new(
            samples,
            vec!["resistivity".into(), "hardness".into()],
            vec![TaskKind::Regression, TaskKind::Regression],
        )
        .unwrap();
        let counts = ds.downsample_task(0, 1_000, 9).unwrap().label_counts();
        assert_eq!(counts[0] as f64 / counts[1] as f64, 1.25);
    }

    #[test]
    fn single_task_view() {
        let ds = toy();
        let b = ds.single_task(1);
        assert_eq!(b.len(), 10);
        assert_eq!(b.task_names, vec!["b".to_string()]);
        assert!(b.samples.iter().all(|s| s.targets.len() == 1 && s.has(0)));
    }
}
