//! The three model families and their shared plumbing.

mod checkpoint;
mod gradcheck;
mod independent;
mod shared;
mod structured;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, AnyModel, ArchitectureDescriptor, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{
    gradcheck_all, gradcheck_batch, gradcheck_model, perturb_running_stats, GradCheckSummary,
    MODEL_FD_STEP,
};
pub use independent::{IndependentCache, IndependentModel};
pub use shared::{SharedCache, SharedMtlModel};
pub use structured::{StructuredCache, StructuredMtlModel, TaskRelationGraph};

use crate::data::TaskKind;
use crate::error::Result;
use crate::losses::RegularizationConfig;
use crate::numeric::{sigmoid, Matrix, Mode, Parameterized};
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Independent,
    StandardMtl,
    StructuredMtl,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Independent,
        ModelKind::StandardMtl,
        ModelKind::StructuredMtl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Independent => "independent",
            ModelKind::StandardMtl => "standard_mtl",
            ModelKind::StructuredMtl => "structured_mtl",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture hyperparameters shared by all model kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub head_hidden: usize,
    pub dropout: f64,
    pub embedding_dim: usize,
    pub gcn_hidden: usize,
    pub edge_hidden: usize,
    pub fusion_hidden: usize,
    /// Strength of the auxiliary fusion term.
    pub alpha: f64,
    /// Treat other tasks' base predictions as constants in the fusion term.
    pub stop_gradient: bool,
    pub regularization: RegularizationConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            head_hidden: 64,
            dropout: 0.3,
            embedding_dim: 64,
            gcn_hidden: 64,
            edge_hidden: 32,
            fusion_hidden: 16,
            alpha: 0.1,
            stop_gradient: true,
            regularization: RegularizationConfig::default(),
        }
    }
}

/// A trainable multi-output network.
///
/// `forward` returns predictions in output space (probabilities for
/// classification tasks); `backward` takes d loss / d prediction and returns
/// one gradient per parameter group, aligned with
/// [`Parameterized::params`].
pub trait Network: Parameterized + Clone + Send + Sync {
    type Cache;

    fn task_kinds(&self) -> &[TaskKind];

    fn task_count(&self) -> usize {
        self.task_kinds().len()
    }

    fn forward(
        &mut self,
        features: &Matrix,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Matrix, Self::Cache)>;

    /// With `include_auxiliary`, gradients of [`Network::auxiliary_loss`]
    /// are added.
    fn backward(
        &self,
        cache: &Self::Cache,
        grad_out: &Matrix,
        include_auxiliary: bool,
    ) -> Result<Vec<Matrix>>;

    /// Model-internal penalty added to the data loss (e.g. relation
    /// regularization).
    fn auxiliary_loss(&self, cache: &Self::Cache) -> f64 {
        self.auxiliary_terms(cache).iter().sum()
    }

    /// [`Network::auxiliary_loss`] split into additive terms.
    fn auxiliary_terms(&self, _cache: &Self::Cache) -> Vec<f64> {
        Vec::new()
    }

    /// On/off state of every ReLU unit in the forward pass behind `cache`.
    fn relu_pattern(&self, cache: &Self::Cache) -> Vec<bool>;

    /// Number of leading parameter groups that belong to a shared backbone.
    fn backbone_groups(&self) -> usize {
        0
    }
}

/// Applies a sigmoid to classification columns of a logit matrix.
pub(crate) fn to_output_space(logits: &Matrix, kinds: &[TaskKind]) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        for (c, kind) in kinds.iter().enumerate() {
            if *kind == TaskKind::Classification {
                out.set(r, c, sigmoid(logits.get(r, c)));
            }
        }
    }
    out
}

/// Chains d loss / d prediction back to d loss / d logit.
pub(crate) fn to_logit_grad(grad_out: &Matrix, preds: &Matrix, kinds: &[TaskKind]) -> Matrix {
    let mut g = grad_out.clone();
    for r in 0..g.rows() {
        for (c, kind) in kinds.iter().enumerate() {
            if *kind == TaskKind::Classification {
                let p = preds.get(r, c);
                g.set(r, c, grad_out.get(r, c) * p * (1.0 - p));
            }
        }
    }
    g
}
