//! Masked per-task losses, weighted multi-task combination and the
//! relation-graph regularizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Lower clamp for probabilities entering the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Bce,
}

/// A task's masked loss on one batch together with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLoss {
    pub value: f64,
    /// d value / d prediction, zero at masked-out positions.
    pub grad: Vec<f64>,
    /// Number of labeled samples that entered the mean.
    pub labeled: usize,
}

impl TaskLoss {
    /// The batch held no label for this task: zero loss, zero gradient.
    pub fn zero_contribution(len: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; len],
            labeled: 0,
        }
    }

    pub fn is_zero_contribution(&self) -> bool {
        self.labeled == 0
    }
}

fn sample_loss(pred: f64, target: f64, kind: LossKind) -> (f64, f64) {
    match kind {
        LossKind::Mse => {
            let d = pred - target;
            (d * d, 2.0 * d)
        }
        LossKind::Bce => {
            let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let value = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
            // Straight-through clamp: saturated predictions keep a gradient.
            let grad = (p - target) / (p * (1.0 - p));
            (value, grad)
        }
    }
}

/// `Σ m_i ℓ(y_i, ŷ_i) / Σ m_i`; masked-out entries are never read.
///
/// With no labeled entries the task contributes nothing (0/0 := 0).
pub fn masked_loss(
    preds: &[f64],
    targets: &[f64],
    mask: &[bool],
    kind: LossKind,
) -> Result<TaskLoss> {
    if preds.len() != targets.len() || preds.len() != mask.len() {
        return Err(Error::Dimension {
            context: "masked loss",
            expected: preds.len(),
            found: targets.len().min(mask.len()),
        });
    }
    let labeled = mask.iter().filter(|&&m| m).count();
    if labeled == 0 {
        return Ok(TaskLoss::zero_contribution(preds.len()));
    }
    let mut sum = 0.0;
    let mut grad = vec![0.0; preds.len()];
    let inv = 1.0 / labeled as f64;
    for i in 0..preds.len() {
        if !mask[i] {
            continue;
        }
        if !preds[i].is_finite() {
            return Err(Error::NonFinite(format!("prediction at position {i}")));
        }
        let (value, g) = sample_loss(preds[i], targets[i], kind);
        sum += value;
        grad[i] = g * inv;
    }
    Ok(TaskLoss {
        value: sum / labeled as f64,
        grad,
        labeled,
    })
}

/// Positive per-task loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights(Vec<f64>);

impl TaskWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config(format!(
                "task weights must be positive and finite, got {weights:?}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(tasks: usize) -> Self {
        Self(vec![1.0; tasks])
    }

    /// The alloy-benchmark weights for (resistivity, hardness, amorphous).
    pub fn alloy() -> Self {
        Self(vec![1.0, 65.0, 62.0])
    }

    /// `w_t = n_max / n_t`, so the largest task has weight 1.
    pub fn inverse_frequency(counts: &[usize]) -> Result<Self> {
        let max = counts.iter().copied().max().unwrap_or(0);
        if counts.contains(&0) {
            return Err(Error::Config(format!(
                "inverse-frequency weights need every task labeled at least once, got {counts:?}"
            )));
        }
        Self::new(counts.iter().map(|&n| max as f64 / n as f64).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `Σ_t w_t L_t`; zero-contribution tasks add nothing.
pub fn combined_mtl_loss(task_losses: &[TaskLoss], weights: &TaskWeights) -> Result<f64> {
    if task_losses.len() != weights.len() {
        return Err(Error::Dimension {
            context: "combined loss",
            expected: weights.len(),
            found: task_losses.len(),
        });
    }
    Ok(task_losses
        .iter()
        .zip(weights.as_slice())
        .filter(|(l, _)| !l.is_zero_contribution())
        .map(|(l, w)| w * l.value)
        .sum())
}

/// Weighted masked loss of a `batch × tasks` prediction matrix.
///
/// Returns the combined value, its gradient with respect to `preds`, and the
/// per-task losses. `mask` is indexed `[task][row]`.
pub fn batch_loss(
    preds: &Matrix,
    targets: &Matrix,
    mask: &[Vec<bool>],
    kinds: &[LossKind],
    weights: &TaskWeights,
) -> Result<(f64, Matrix, Vec<TaskLoss>)> {
    let tasks = kinds.len();
    if preds.cols() != tasks
        || targets.cols() != tasks
        || mask.len() != tasks
        || weights.len() != tasks
    {
        return Err(Error::Dimension {
            context: "batch loss tasks",
            expected: tasks,
            found: preds.cols(),
        });
    }
    let mut grad = Matrix::zeros(preds.rows(), tasks);
    let mut losses = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let l = masked_loss(&preds.column(t), &targets.column(t), &mask[t], kinds[t])?;
        let w = weights.as_slice()[t];
        grad.set_column(t, &l.grad.iter().map(|g| w * g).collect::<Vec<_>>());
        losses.push(l);
    }
    let value = combined_mtl_loss(&losses, weights)?;
    Ok((value, grad, losses))
}

/// Sign applied to the trace inside the regularizer `λ2 (1 − s·tr W)`.
///
/// `Reward` (s = +1) favours a large trace; `Penalize` (s = −1) pushes it down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSign {
    #[default]
    Reward,
    Penalize,
}

impl TraceSign {
    fn factor(self) -> f64 {
        match self {
            TraceSign::Reward => 1.0,
            TraceSign::Penalize => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationConfig {
    /// L1 sparsity weight on the relation matrix.
    pub lambda1: f64,
    /// Weight of the trace term.
    pub lambda2: f64,
    #[serde(default)]
    pub trace_sign: TraceSign,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.1,
            trace_sign: TraceSign::Reward,
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(format!(
                "regularization weights must be non-negative, got λ1 = {}, λ2 = {}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// `λ1 ‖W‖₁ + λ2 (1 − s·tr W)` for a square relation matrix.
pub fn relation_penalty(relations: &Matrix, reg: &RegularizationConfig) -> f64 {
    let l1: f64 = relations.as_slice().iter().map(|w| w.abs()).sum();
    let n = relations.rows().min(relations.cols());
    let trace: f64 = (0..n).map(|i| relations.get(i, i)).sum();
    reg.lambda1 * l1 + reg.lambda2 * (1.0 - reg.trace_sign.factor() * trace)
}

/// Gradient of [`relation_penalty`] with respect to each entry of `W`.
pub fn relation_penalty_grad(relations: &Matrix, reg: &RegularizationConfig) -> Matrix {
    let mut grad = relations.map(|w| if w >= 0.0 { reg.lambda1 } else { -reg.lambda1 });
    let n = relations.rows().min(relations.cols());
    for i in 0..n {
        let g = grad.get(i, i) - reg.lambda2 * reg.trace_sign.factor();
        grad.set(i, i, g);
    }
    grad
}

/// `mtl_loss + λ1 ‖W‖₁ + λ2 (1 − tr W)`.
pub fn structured_loss(mtl_loss: f64, relations: &Matrix, reg: &RegularizationConfig) -> f64 {
    mtl_loss + relation_penalty(relations, reg)
}
