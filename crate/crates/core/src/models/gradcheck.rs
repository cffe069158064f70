use rand::Rng;
use serde::Serialize;

use super::{
    IndependentModel, ModelConfig, ModelKind, Network, SharedMtlModel, StructuredMtlModel,
};
use crate::data::{Batch, TaskKind};
use crate::error::Result;
use crate::losses::{batch_loss, masked_loss, LossKind, TaskWeights};
use crate::numeric::{finite_diff_check_terms, Evaluation, GradCheck, Layer, Matrix, Mode};
use crate::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(parameter group, element)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl From<GradCheck> for GradCheckSummary {
    fn from(g: GradCheck) -> Self {
        Self {
            max_relative_error: g.max_relative_error,
            checked: g.checked,
            worst: g.worst,
        }
    }
}

/// Initial central-difference step for whole-model checks.
///
/// Some entries have gradients near 1e-8 (deep in the classification head),
/// where rounding noise of order `ε / h` dominates the relative error at
/// small steps. Richardson extrapolation removes the `h²` truncation term,
/// so a fairly wide step is accurate on smooth pieces; kink crossings are
/// caught by the ReLU pattern and retried with a smaller step.
pub const MODEL_FD_STEP: f64 = 1e-2;

/// Finite-difference check of a model's full training objective on one
/// batch (weighted masked loss plus any auxiliary penalty).
///
/// Runs in eval mode, so dropout is off and batchnorm uses its running
/// statistics. Every parameter entry is perturbed; the numeric side
/// differences each per-sample loss term separately.
pub fn gradcheck_model<M: Network>(
    model: &M,
    batch: &Batch,
    weights: &TaskWeights,
) -> Result<GradCheck> {
    let mut model = model.clone();
    let kinds: Vec<LossKind> = model.task_kinds().iter().map(|k| k.loss()).collect();
    let mut rng = crate::rng_for(0, 0);
    let (preds, cache) = model.forward(&batch.features, Mode::Eval, &mut rng)?;
    let (_, grad, _) = batch_loss(&preds, &batch.targets, &batch.mask, &kinds, weights)?;
    let analytic = model.backward(&cache, &grad, true)?;
    finite_diff_check_terms(&mut model, &analytic, MODEL_FD_STEP, |m| {
        let (preds, cache) = m.forward(&batch.features, Mode::Eval, &mut rng)?;
        let mut terms = loss_terms(&preds, batch, &kinds, weights)?;
        terms.extend(m.auxiliary_terms(&cache));
        Ok(Evaluation {
            terms,
            pattern: m.relu_pattern(&cache),
        })
    })
}

/// Per-sample contributions `w_t ℓ(ŷ, y) / n_t` whose sum is the weighted
/// masked loss.
fn loss_terms(
    preds: &Matrix,
    batch: &Batch,
    kinds: &[LossKind],
    weights: &TaskWeights,
) -> Result<Vec<f64>> {
    let mut terms = Vec::new();
    for (t, kind) in kinds.iter().enumerate() {
        let labeled = batch.mask[t].iter().filter(|&&m| m).count();
        for r in (0..batch.len()).filter(|&r| batch.mask[t][r]) {
            let l = masked_loss(
                &[preds.get(r, t)],
                &[batch.targets.get(r, t)],
                &[true],
                *kind,
            )?;
            terms.push(weights.as_slice()[t] * l.value / labeled as f64);
        }
    }
    Ok(terms)
}

/// A random masked batch with 21 features in [-2, 2).
pub fn gradcheck_batch(tasks: &[TaskKind], rows: usize, seed: u64) -> Batch {
    let mut rng = rng_for(seed, 3);
    let features = Matrix::from_vec(
        rows,
        21,
        (0..rows * 21)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    )
    .unwrap();
    let mut targets = Matrix::zeros(rows, tasks.len());
    let mut mask = vec![vec![false; rows]; tasks.len()];
    for r in 0..rows {
        for (t, kind) in tasks.iter().enumerate() {
            if (r + t) % 3 != 2 || t == 0 {
                mask[t][r] = true;
                let y = match kind {
                    TaskKind::Regression => rng.random_range(-1.0..1.0),
                    TaskKind::Classification => f64::from(rng.random_bool(0.5)),
                };
                targets.set(r, t, y);
            }
        }
    }
    Batch {
        indices: (0..rows).collect(),
        features,
        targets,
        mask,
    }
}

/// Moves batchnorm running statistics away from (0, 1) so that eval-mode
/// normalization is exercised.
pub fn perturb_running_stats<'a>(layers: impl Iterator<Item = &'a mut Layer>) {
    for layer in layers {
        if let Layer::BatchNorm(bn) = layer {
            for (i, (m, v)) in bn
                .running_mean
                .iter_mut()
                .zip(&mut bn.running_var)
                .enumerate()
            {
                *m = 0.1 * (i as f64 * 0.7).sin();
                *v = 0.6 + 0.3 * (i as f64 * 1.3).cos().abs();
            }
        }
    }
}

/// Gradient check of every model kind at full width on a small masked batch
/// over `kinds`. The structured model is checked with full backprop through
/// its fusion inputs (with stop-gradient its analytic gradient deliberately
/// omits a path).
pub fn gradcheck_all(
    config: &ModelConfig,
    kinds: &[TaskKind],
    rows: usize,
    seed: u64,
) -> Result<Vec<(ModelKind, GradCheck)>> {
    let mut out = Vec::new();
    let batch = gradcheck_batch(kinds, rows, seed);
    let mut worst = None::<GradCheck>;
    for (t, &kind) in kinds.iter().enumerate() {
        let mut m = IndependentModel::new(21, kind, config, &mut rng_for(seed, 10 + t as u64));
        perturb_running_stats(m.net.layers.iter_mut());
        let single = Batch {
            indices: batch.indices.clone(),
            features: batch.features.clone(),
            targets: Matrix::column_vector(batch.targets.column(t)),
            mask: vec![vec![true; rows]],
        };
        let g = gradcheck_model(&m, &single, &TaskWeights::uniform(1))?;
        if worst
            .as_ref()
            .is_none_or(|w| g.max_relative_error > w.max_relative_error)
        {
            worst = Some(g);
        }
    }
    if let Some(w) = worst {
        out.push((ModelKind::Independent, w));
    }
    let weights = TaskWeights::new((1..=kinds.len()).map(|t| t as f64).collect())?;
    let mut shared = SharedMtlModel::new(21, kinds, config, &mut rng_for(seed, 20));
    perturb_running_stats(shared.backbone.layers.iter_mut());
    out.push((
        ModelKind::StandardMtl,
        gradcheck_model(&shared, &batch, &weights)?,
    ));
    let structured_config = ModelConfig {
        stop_gradient: false,
        ..config.clone()
    };
    let mut structured =
        StructuredMtlModel::new(21, kinds, &structured_config, &mut rng_for(seed, 30))?;
    perturb_running_stats(structured.shared.backbone.layers.iter_mut());
    out.push((
        ModelKind::StructuredMtl,
        gradcheck_model(&structured, &batch, &weights)?,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINDS: [TaskKind; 3] = [
        TaskKind::Regression,
        TaskKind::Regression,
        TaskKind::Classification,
    ];

    #[test]
    fn independent_regression_and_classification() {
        for kind in [TaskKind::Regression, TaskKind::Classification] {
            let mut m =
                IndependentModel::new(21, kind, &ModelConfig::default(), &mut rng_for(1, 0));
            perturb_running_stats(m.net.layers.iter_mut());
            let report = gradcheck_model(
                &m,
                &gradcheck_batch(&[kind], 3, 1),
                &TaskWeights::uniform(1),
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-4, "{kind:?} {report:?}");
        }
    }

    #[test]
    fn shared_model_small_widths() {
        let config = ModelConfig {
            hidden: vec![16, 12],
            head_hidden: 8,
            ..ModelConfig::default()
        };
        let mut m = SharedMtlModel::new(21, &KINDS, &config, &mut rng_for(2, 0));
        perturb_running_stats(m.backbone.layers.iter_mut());
        let weights = TaskWeights::new(vec![1.0, 3.0, 2.0]).unwrap();
        let report = gradcheck_model(&m, &gradcheck_batch(&KINDS, 5, 2), &weights).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn structured_model_with_full_backprop() {
        let config = ModelConfig {
            hidden: vec![16, 12],
            head_hidden: 8,
            embedding_dim: 6,
            gcn_hidden: 5,
            edge_hidden: 4,
            alpha: 0.7,
            stop_gradient: false,
            ..ModelConfig::default()
        };
        let mut m = StructuredMtlModel::new(21, &KINDS, &config, &mut rng_for(3, 0)).unwrap();
        perturb_running_stats(m.shared.backbone.layers.iter_mut());
        let report =
            gradcheck_model(&m, &gradcheck_batch(&KINDS, 5, 3), &TaskWeights::uniform(3)).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn stop_gradient_differs_from_the_true_gradient() {
        let config = ModelConfig {
            hidden: vec![8],
            head_hidden: 4,
            embedding_dim: 4,
            gcn_hidden: 4,
            edge_hidden: 4,
            alpha: 0.9,
            ..ModelConfig::default()
        };
        let m = StructuredMtlModel::new(21, &KINDS, &config, &mut rng_for(4, 0)).unwrap();
        let report =
            gradcheck_model(&m, &gradcheck_batch(&KINDS, 4, 4), &TaskWeights::uniform(3)).unwrap();
        assert!(report.max_relative_error > 1e-3, "{report:?}");
    }
}
