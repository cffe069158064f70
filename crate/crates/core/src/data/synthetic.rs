use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, TaskKind};
use crate::error::{Error, Result};
use crate::numeric::{dot, Matrix};

/// Recipe for a synthetic union dataset with tunable task relatedness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub feature_dim: usize,
    /// Labeled samples per task; each task gets its own disjoint block.
    pub counts: Vec<usize>,
    pub task_names: Vec<String>,
    pub task_kinds: Vec<TaskKind>,
    /// Weight of the shared teacher, `ρ ∈ [0, 1]`.
    pub relatedness: f64,
    pub teacher_width: usize,
    pub noise_std: f64,
    /// Fraction of positive labels for classification tasks.
    pub classification_balance: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Alloy-like proportions at one tenth of the original totals.
    fn default() -> Self {
        Self {
            feature_dim: 21,
            counts: vec![5239, 80, 84],
            task_names: vec!["resistivity".into(), "hardness".into(), "amorphous".into()],
            task_kinds: vec![
                TaskKind::Regression,
                TaskKind::Regression,
                TaskKind::Classification,
            ],
            relatedness: 0.0,
            teacher_width: 16,
            noise_std: 0.1,
            classification_balance: 0.4,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let tasks = self.counts.len();
        if tasks == 0 || self.task_names.len() != tasks || self.task_kinds.len() != tasks {
            return Err(Error::Config(
                "synthetic spec needs matching counts, task_names and task_kinds".into(),
            ));
        }
        if self.counts.contains(&0) {
            return Err(Error::Config(
                "synthetic task counts must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.relatedness) {
            return Err(Error::Config(format!(
                "relatedness {} outside [0, 1]",
                self.relatedness
            )));
        }
        if !(self.classification_balance > 0.0 && self.classification_balance < 1.0) {
            return Err(Error::Config(
                "classification_balance must lie in (0, 1)".into(),
            ));
        }
        if !(self.noise_std >= 0.0) || self.teacher_width == 0 {
            return Err(Error::Config(
                "noise_std must be ≥ 0 and teacher_width ≥ 1".into(),
            ));
        }
        if self.feature_dim < tasks + 1 {
            return Err(Error::Config(format!(
                "feature_dim {} too small for {} teachers",
                self.feature_dim,
                tasks + 1
            )));
        }
        Ok(())
    }
}

/// Fixed random two-layer tanh network, standardized to unit variance
/// under standard-normal inputs.
#[derive(Debug, Clone, PartialEq)]
struct Teacher {
    /// `feature_dim × width`
    input: Matrix,
    output: Vec<f64>,
    offset: f64,
    scale: f64,
}

impl Teacher {
    fn raw(&self, x: &[f64]) -> f64 {
        let width = self.output.len();
        let mut h = vec![0.0; width];
        for (xi, row) in x.iter().zip(0..self.input.rows()) {
            for (hj, w) in h.iter_mut().zip(self.input.row(row)) {
                *hj += xi * w;
            }
        }
        h.iter().zip(&self.output).map(|(a, v)| a.tanh() * v).sum()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.raw(x) - self.offset) * self.scale
    }
}

/// The shared and per-task teachers behind a synthetic dataset.
///
/// Each teacher reads its own block of an orthonormal basis of the input
/// space, so at `ρ = 0` task targets are statistically independent.
#[derive(Debug, Clone, PartialEq)]
pub struct Teachers {
    shared: Teacher,
    private: Vec<Teacher>,
    relatedness: f64,
}

impl Teachers {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = crate::rng_for(spec.seed, 1);
        let d = spec.feature_dim;
        let basis = orthonormal_basis(d, &mut rng);
        let blocks = spec.counts.len() + 1;
        let block = d / blocks;
        let make = |b: usize, rng: &mut crate::SeededRng| {
            // the shared teacher also absorbs leftover dimensions
            let extra = d % blocks;
            let (start, end) = if b == 0 {
                (0, block + extra)
            } else {
                (extra + b * block, extra + (b + 1) * block)
            };
            let k = end - start;
            let mut input = Matrix::zeros(d, spec.teacher_width);
            for j in 0..spec.teacher_width {
                let coeffs: Vec<f64> = (0..k)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) / (k as f64).sqrt())
                    .collect();
                for (c, dir) in coeffs.iter().zip(start..end) {
                    for (i, q) in basis[dir].iter().enumerate() {
                        let v = input.get(i, j) + c * q;
                        input.set(i, j, v);
                    }
                }
            }
            let output: Vec<f64> = (0..spec.teacher_width)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut t = Teacher {
                input,
                output,
                offset: 0.0,
                scale: 1.0,
            };
            let probe: Vec<f64> = (0..4096)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    t.raw(&x)
                })
                .collect();
            let mean = probe.iter().sum::<f64>() / probe.len() as f64;
            let var = probe.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / probe.len() as f64;
            t.offset = mean;
            t.scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
            t
        };
        let shared = make(0, &mut rng);
        let private = (1..blocks).map(|b| make(b, &mut rng)).collect();
        Ok(Self {
            shared,
            private,
            relatedness: spec.relatedness,
        })
    }

    /// Noise-free latent score of every task at `x`.
    pub fn latent(&self, x: &[f64]) -> Vec<f64> {
        let s = self.shared.eval(x);
        self.private
            .iter()
            .map(|p| self.relatedness * s + (1.0 - self.relatedness) * p.eval(x))
            .collect()
    }
}

fn orthonormal_basis(d: usize, rng: &mut crate::SeededRng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Draws a union dataset: task `t` occupies its own block of `counts[t]`
/// samples with standard-normal features, target `latent_t(x) + noise`,
/// thresholded at the balance quantile for classification tasks.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let teachers = Teachers::new(spec)?;
    let mut rng = crate::rng_for(spec.seed, 2);
    let tasks = spec.counts.len();
    let mut samples = Vec::with_capacity(spec.counts.iter().sum());
    for (t, &n) in spec.counts.iter().enumerate() {
        let mut block: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..spec.feature_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let noise: f64 = rng.sample(StandardNormal);
                let score = teachers.latent(&x)[t] + spec.noise_std * noise;
                (x, score)
            })
            .collect();
        if spec.task_kinds[t] == TaskKind::Classification {
            let positives = ((spec.classification_balance * n as f64).round() as usize).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| block[b].1.total_cmp(&block[a].1).then(a.cmp(&b)));
            let mut labels = vec![0.0; n];
            for &i in &order[..positives] {
                labels[i] = 1.0;
            }
            for (entry, label) in block.iter_mut().zip(labels) {
                entry.1 = label;
            }
        }
        for (x, y) in block {
            let mut targets = vec![None; tasks];
            targets[t] = Some(y);
            samples.push(Sample {
                features: x,
                targets,
            });
        }
    }
    Dataset::new(samples, spec.task_names.clone(), spec.task_kinds.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe_correlation(rho: f64) -> f64 {
        let spec = SyntheticSpec {
            relatedness: rho,
            ..SyntheticSpec::default()
        };
        let teachers = Teachers::new(&spec).unwrap();
        let mut rng = crate::rng_for(1234, 0);
        let (a, b): (Vec<f64>, Vec<f64>) = (0..5_000)
            .map(|_| {
                let x: Vec<f64> = (0..21).map(|_| rng.sample(StandardNormal)).collect();
                let l = teachers.latent(&x);
                (l[0], l[1])
            })
            .unzip();
        pearson(&a, &b)
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn independent_tasks_are_uncorrelated() {
        assert!(probe_correlation(0.0).abs() < 0.1);
    }

    #[test]
    fn fully_related_tasks_share_latent() {
        let spec = SyntheticSpec {
            relatedness: 1.0,
            ..SyntheticSpec::default()
        };
        let teachers = Teachers::new(&spec).unwrap();
        let x = vec![0.3; 21];
        let l = teachers.latent(&x);
        assert!(l.iter().all(|v| *v == l[0]));
    }

    #[test]
    fn correlation_grows_with_relatedness() {
        let c: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&r| probe_correlation(r))
            .collect();
        assert!(c[0] <= c[1] && c[1] <= c[2], "{c:?}");
        assert!((c[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn block_structure_matches_counts() {
        let ds = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(ds.len(), 5_403);
        assert_eq!(ds.feature_dim(), 21);
        assert_eq!(ds.label_counts(), vec![5239, 80, 84]);
        assert!(ds
            .samples
            .iter()
            .all(|s| s.mask().iter().filter(|&&m| m).count() == 1));
        let positives = ds
            .samples
            .iter()
            .filter(|s| s.targets[2] == Some(1.0))
            .count();
        assert_eq!(positives, (0.4f64 * 84.0).round() as usize);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            counts: vec![50, 20, 20],
            ..SyntheticSpec::default()
        };
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SyntheticSpec {
            relatedness: 1.5,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SyntheticSpec {
            counts: vec![10, 0, 3],
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }
}
