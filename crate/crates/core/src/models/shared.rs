use serde::{Deserialize, Serialize};

use super::{to_logit_grad, to_output_space, ModelConfig, Network};
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Mode, Parameterized, Sequential, SequentialCache};
use crate::SeededRng;

/// Shared backbone with one small head per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedMtlModel {
    pub backbone: Sequential,
    pub heads: Vec<Sequential>,
    pub kinds: Vec<TaskKind>,
    /// A frozen backbone runs in eval mode and is excluded from `params`.
    pub freeze_backbone: bool,
}

#[derive(Debug, Clone)]
pub struct SharedCache {
    backbone: SequentialCache,
    heads: Vec<SequentialCache>,
    pub representation: Matrix,
    pub logits: Matrix,
    pub predictions: Matrix,
}

impl SharedMtlModel {
    pub fn new(
        input_dim: usize,
        kinds: &[TaskKind],
        config: &ModelConfig,
        rng: &mut SeededRng,
    ) -> Self {
        let backbone = Sequential::hidden_blocks(input_dim, &config.hidden, config.dropout, rng);
        let width = config.hidden.last().copied().unwrap_or(input_dim);
        let heads = kinds
            .iter()
            .map(|_| Sequential::mlp(&[width, config.head_hidden, 1], rng))
            .collect();
        Self {
            backbone,
            heads,
            kinds: kinds.to_vec(),
            freeze_backbone: false,
        }
    }

    pub fn representation_dim(&self) -> usize {
        self.backbone.output_dim().unwrap_or(0)
    }

    pub fn backbone_param_groups(&self) -> usize {
        self.backbone.params().len()
    }

    /// Forward pass returning the cache, which also holds the shared
    /// representation `z` and the per-task logits.
    pub fn forward_cached(
        &mut self,
        features: &Matrix,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<SharedCache> {
        let backbone_mode = if self.freeze_backbone {
            Mode::Eval
        } else {
            mode
        };
        let (z, backbone) = self.backbone.forward(features, backbone_mode, rng)?;
        let mut logits = Matrix::zeros(features.rows(), self.heads.len());
        let mut heads = Vec::with_capacity(self.heads.len());
        for (t, head) in self.heads.iter_mut().enumerate() {
            let (out, cache) = head.forward(&z, mode, rng)?;
            logits.set_column(t, out.as_slice());
            heads.push(cache);
        }
        let predictions = to_output_space(&logits, &self.kinds);
        Ok(SharedCache {
            backbone,
            heads,
            representation: z,
            logits,
            predictions,
        })
    }

    /// `(per-task predictions, z)`.
    pub fn forward_with_representation(
        &mut self,
        features: &Matrix,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Matrix, Matrix)> {
        let cache = self.forward_cached(features, mode, rng)?;
        Ok((cache.predictions, cache.representation))
    }

    /// Backpropagates a gradient given with respect to the logits.
    pub fn backward_logits(
        &self,
        cache: &SharedCache,
        grad_logits: &Matrix,
    ) -> Result<Vec<Matrix>> {
        if grad_logits.cols() != self.heads.len() || grad_logits.rows() != cache.logits.rows() {
            return Err(Error::Dimension {
                context: "shared model output gradient",
                expected: self.heads.len(),
                found: grad_logits.cols(),
            });
        }
        let mut dz = Matrix::zeros(cache.representation.rows(), cache.representation.cols());
        let mut head_grads = Vec::new();
        for (t, (head, hc)) in self.heads.iter().zip(&cache.heads).enumerate() {
            let g = Matrix::column_vector(grad_logits.column(t));
            let (dx, grads) = head.backward(hc, &g, !self.freeze_backbone)?;
            if let Some(dx) = dx {
                dz.add_scaled(&dx, 1.0);
            }
            head_grads.extend(grads);
        }
        let mut out = Vec::new();
        if !self.freeze_backbone {
            let (_, grads) = self.backbone.backward(&cache.backbone, &dz, false)?;
            out.extend(grads);
        }
        out.extend(head_grads);
        Ok(out)
    }
}

impl Parameterized for SharedMtlModel {
    fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        if !self.freeze_backbone {
            out.extend(self.backbone.params());
        }
        for h in &self.heads {
            out.extend(h.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        if !self.freeze_backbone {
            out.extend(self.backbone.params_mut());
        }
        for h in &mut self.heads {
            out.extend(h.params_mut());
        }
        out
    }
}

impl Network for SharedMtlModel {
    type Cache = SharedCache;

    fn task_kinds(&self) -> &[TaskKind] {
        &self.kinds
    }

    fn forward(
        &mut self,
        features: &Matrix,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Matrix, SharedCache)> {
        let cache = self.forward_cached(features, mode, rng)?;
        Ok((cache.predictions.clone(), cache))
    }

    fn backward(
        &self,
        cache: &SharedCache,
        grad_out: &Matrix,
        _include_auxiliary: bool,
    ) -> Result<Vec<Matrix>> {
        let g = to_logit_grad(grad_out, &cache.predictions, &self.kinds);
        self.backward_logits(cache, &g)
    }

    fn relu_pattern(&self, cache: &SharedCache) -> Vec<bool> {
        let mut out = Vec::new();
        self.backbone.relu_pattern(&cache.backbone, &mut out);
        for (head, hc) in self.heads.iter().zip(&cache.heads) {
            head.relu_pattern(hc, &mut out);
        }
        out
    }

    fn backbone_groups(&self) -> usize {
        if self.freeze_backbone {
            0
        } else {
            self.backbone_param_groups()
        }
    }
}
