use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, TaskKind};
use crate::error::{Error, Result};

/// Quantile bins used to stratify a regression target.
pub const REGRESSION_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r))
            || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Argument(format!(
                "split ratios must be in [0, 1] and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` counts for a group of `n`: validation and test
    /// take the ceiling of their share, training gets the rest (and at least
    /// one sample whenever `n > 0` and its ratio is positive).
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let share = |r: f64| ((n as f64 * r) - 1e-9).ceil().max(0.0) as usize;
        let mut val = share(self.val).min(n);
        let mut test = share(self.test).min(n - val);
        if n > 0 && self.train > 0.0 && val + test == n {
            if test > 0 {
                test -= 1;
            } else if val > 0 {
                val -= 1;
            }
        }
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
}

/// Splits each mask-pattern group separately, stratifying within the group
/// on its first labeled task: by class for classification, by quantile bin
/// for regression.
pub fn stratified_split(dataset: &Dataset, ratios: SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        groups.entry(s.mask()).or_default().push(i);
    }
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (pattern, members) in &groups {
        let pattern_id = pattern
            .iter()
            .enumerate()
            .fold(0u64, |acc, (t, &m)| acc | (u64::from(m) << t));
        let mut rng = crate::rng_for(seed, pattern_id);
        let task = pattern
            .iter()
            .position(|&m| m)
            .expect("every sample has a label");
        let bins = stratify(dataset, members, task, dataset.task_kinds[task]);
        let bins = if bins.iter().any(Vec::is_empty) || members.len() < bins.len() {
            log::warn!(
                "group {pattern:?} has {} samples for {} bins; splitting unstratified",
                members.len(),
                bins.len()
            );
            vec![members.clone()]
        } else {
            bins
        };
        let (_, n_val, n_test) = ratios.counts(members.len());
        let sizes: Vec<usize> = bins.iter().map(Vec::len).collect();
        let val_quota = apportion(&sizes, n_val, &vec![usize::MAX; sizes.len()]);
        let room: Vec<usize> = sizes.iter().zip(&val_quota).map(|(s, v)| s - v).collect();
        let test_quota = apportion(&sizes, n_test, &room);
        for ((mut bin, nv), nt) in bins.into_iter().zip(val_quota).zip(test_quota) {
            bin.shuffle(&mut rng);
            out.val.extend_from_slice(&bin[..nv]);
            out.test.extend_from_slice(&bin[nv..nv + nt]);
            out.train.extend_from_slice(&bin[nv + nt..]);
        }
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(Split {
        train: dataset.subset(&out.train),
        val: dataset.subset(&out.val),
        test: dataset.subset(&out.test),
        indices: out,
    })
}

fn stratify(dataset: &Dataset, members: &[usize], task: usize, kind: TaskKind) -> Vec<Vec<usize>> {
    let target = |i: usize| dataset.samples[i].targets[task].expect("labeled by pattern");
    match kind {
        TaskKind::Classification => {
            let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for &i in members {
                by_class
                    .entry(target(i).round() as i64)
                    .or_default()
                    .push(i);
            }
            by_class.into_values().collect()
        }
        TaskKind::Regression => {
            let mut sorted = members.to_vec();
            sorted.sort_by(|&a, &b| target(a).total_cmp(&target(b)).then(a.cmp(&b)));
            let n = sorted.len();
            (0..REGRESSION_BINS)
                .map(|b| sorted[b * n / REGRESSION_BINS..(b + 1) * n / REGRESSION_BINS].to_vec())
                .collect()
        }
    }
}

/// Distributes `total` across bins proportionally to `sizes` by largest
/// remainder, never exceeding `caps`.
fn apportion(sizes: &[usize], total: usize, caps: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut quota: Vec<usize> = sizes
        .iter()
        .zip(caps)
        .map(|(&s, &cap)| (s * total / n).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&b| std::cmp::Reverse(sizes[b] * total % n));
    let mut assigned: usize = quota.iter().sum();
    while assigned < total {
        let before = assigned;
        for &b in &order {
            if assigned == total {
                break;
            }
            if quota[b] < caps[b].min(sizes[b]) {
                quota[b] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    quota
}
