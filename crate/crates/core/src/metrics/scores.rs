use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// NaN when the targets are constant.
    pub r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub f1: f64,
    /// NaN when only one class is present.
    pub auc: f64,
    pub recall: f64,
}

/// Decision threshold for accuracy, F1 and recall; `p >= THRESHOLD` is positive.
pub const THRESHOLD: f64 = 0.5;

fn check_lengths(a: usize, b: usize, context: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            context,
            expected: a,
            found: b,
        });
    }
    if a == 0 {
        return Err(Error::Argument(format!("{context}: no samples")));
    }
    Ok(())
}

pub fn regression_metrics(preds: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    check_lengths(preds.len(), targets.len(), "regression metrics")?;
    let n = preds.len() as f64;
    let mut sse = 0.0;
    let mut sae = 0.0;
    for (p, y) in preds.iter().zip(targets) {
        let e = p - y;
        sse += e * e;
        sae += e.abs();
    }
    let mean = targets.iter().sum::<f64>() / n;
    let sst: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r2 = if sst == 0.0 {
        log::warn!("R² is undefined for constant targets");
        f64::NAN
    } else {
        1.0 - sse / sst
    };
    Ok(RegressionMetrics {
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        r2,
    })
}

/// Rank statistic: the probability that a random positive scores above a
/// random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks over runs of tied scores.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        log::warn!("AUC is undefined when only one class is present");
        return f64::NAN;
    }
    (rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

pub fn classification_metrics(probs: &[f64], labels: &[f64]) -> Result<ClassificationMetrics> {
    check_lengths(probs.len(), labels.len(), "classification metrics")?;
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::Argument(format!(
            "class labels must be 0 or 1, got {l}"
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Argument(format!(
            "probabilities must lie in [0, 1], got {p}"
        )));
    }
    let truth: Vec<bool> = labels.iter().map(|&l| l == 1.0).collect();
    let (mut tp, mut fp, mut fn_, mut correct) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &y) in probs.iter().zip(&truth) {
        let predicted = p >= THRESHOLD;
        match (predicted, y) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
        if predicted == y {
            correct += 1.0;
        }
    }
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if tp + fp == 0.0 {
        0.0
    } else {
        let precision = tp / (tp + fp);
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    };
    Ok(ClassificationMetrics {
        accuracy: correct / probs.len() as f64,
        f1,
        auc: roc_auc(probs, &truth),
        recall,
    })
}
