use serde::{Deserialize, Serialize};

use super::{
    fit_normalize, stratified_split, Dataset, NormalizationStats, SplitIndices, SplitRatios,
    TargetScaler,
};
use crate::error::Result;

/// Train/validation/test splits ready for training: features standardized
/// and regression targets scaled, both with training-split statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
    pub normalization: NormalizationStats,
    pub scaler: TargetScaler,
}

impl Prepared {
    pub fn new(dataset: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Self> {
        let split = stratified_split(dataset, ratios, seed)?;
        let normalization = fit_normalize(&split.train)?;
        let scaler = TargetScaler::fit(&split.train);
        let apply = |d: &Dataset| -> Result<Dataset> { Ok(scaler.apply(&normalization.apply(d)?)) };
        Ok(Self {
            train: apply(&split.train)?,
            val: apply(&split.val)?,
            test: apply(&split.test)?,
            indices: split.indices,
            normalization,
            scaler,
        })
    }

    /// The same splits reduced to one task's labeled samples.
    pub fn single_task(&self, task: usize) -> Prepared {
        Prepared {
            train: self.train.single_task(task),
            val: self.val.single_task(task),
            test: self.test.single_task(task),
            indices: self.indices.clone(),
            normalization: self.normalization.clone(),
            scaler: self.scaler.select(task),
        }
    }

    /// Keeps `n` of the training samples labeled for `task`.
    pub fn downsample_train(&self, task: usize, n: usize, seed: u64) -> Result<Prepared> {
        Ok(Prepared {
            train: self.train.downsample_task(task, n, seed)?,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    #[test]
    fn statistics_come_from_train_only() {
        let ds = generate_synthetic(&SyntheticSpec {
            counts: vec![300, 60],
            task_names: vec!["a".into(), "b".into()],
            task_kinds: vec![crate::data::TaskKind::Regression; 2],
            ..SyntheticSpec::default()
        })
        .unwrap();
        let p = Prepared::new(&ds, SplitRatios::default(), 1).unwrap();
        assert_eq!(p.train.len() + p.val.len() + p.test.len(), 360);
        for c in 0..p.train.feature_dim() {
            let m: f64 =
                p.train.samples.iter().map(|s| s.features[c]).sum::<f64>() / p.train.len() as f64;
            assert!(m.abs() < 1e-12);
        }
        let ys: Vec<f64> = p
            .train
            .samples
            .iter()
            .filter_map(|s| s.targets[1])
            .collect();
        assert!((ys.iter().sum::<f64>() / ys.len() as f64).abs() < 1e-12);

        let single = p.single_task(1);
        assert_eq!(single.train.label_counts(), vec![ys.len()]);
        assert_eq!(single.scaler.tasks, vec![p.scaler.tasks[1]]);
    }
}
