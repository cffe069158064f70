use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Index batches for one epoch.
///
/// With `shuffle`, the order is drawn from a generator seeded by
/// `(seed, epoch)`. The final partial batch is kept.
pub fn batch_plan(
    n: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut crate::rng_for(seed, epoch));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Features, targets and masks for a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// `batch × feature_dim`
    pub features: Matrix,
    /// `batch × tasks`; 0 where the label is missing.
    pub targets: Matrix,
    /// `mask[task][row]`
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn gather(dataset: &Dataset, indices: &[usize]) -> Batch {
        let tasks = dataset.task_count();
        let mut features = Vec::with_capacity(indices.len() * dataset.feature_dim());
        let mut targets = Matrix::zeros(indices.len(), tasks);
        let mut mask = vec![vec![false; indices.len()]; tasks];
        for (r, &i) in indices.iter().enumerate() {
            let s = &dataset.samples[i];
            features.extend_from_slice(&s.features);
            for (t, y) in s.targets.iter().enumerate() {
                if let Some(y) = y {
                    targets.set(r, t, *y);
                    mask[t][r] = true;
                }
            }
        }
        Batch {
            indices: indices.to_vec(),
            features: Matrix::from_vec(indices.len(), dataset.feature_dim(), features)
                .expect("uniform feature width"),
            targets,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn has_label(&self, task: usize) -> bool {
        self.mask[task].iter().any(|&m| m)
    }
}

/// Iterates the batches of one epoch over a dataset.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    plan: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> BatchIter<'a> {
    pub fn new(
        dataset: &'a Dataset,
        batch_size: usize,
        shuffle: bool,
        seed: u64,
        epoch: u64,
    ) -> Result<Self> {
        Ok(Self {
            dataset,
            plan: batch_plan(dataset.len(), batch_size, shuffle, seed, epoch)?.into_iter(),
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        self.plan
            .next()
            .map(|idx| Batch::gather(self.dataset, &idx))
    }
}
