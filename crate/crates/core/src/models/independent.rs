use serde::{Deserialize, Serialize};

use super::{to_logit_grad, to_output_space, ModelConfig, Network};
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::numeric::{DenseLayer, Layer, Matrix, Mode, Parameterized, Sequential, SequentialCache};
use crate::SeededRng;

/// A single-task network: hidden blocks followed by one linear output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentModel {
    pub net: Sequential,
    kinds: [TaskKind; 1],
}

#[derive(Debug, Clone)]
pub struct IndependentCache {
    net: SequentialCache,
    predictions: Matrix,
}

impl IndependentModel {
    pub fn new(
        input_dim: usize,
        kind: TaskKind,
        config: &ModelConfig,
        rng: &mut SeededRng,
    ) -> Self {
        let mut net = Sequential::hidden_blocks(input_dim, &config.hidden, config.dropout, rng);
        let width = config.hidden.last().copied().unwrap_or(input_dim);
        net.layers
            .push(Layer::Dense(DenseLayer::new(width, 1, rng)));
        Self { net, kinds: [kind] }
    }

    pub fn kind(&self) -> TaskKind {
        self.kinds[0]
    }

    /// The final linear layer.
    pub fn output_layer_mut(&mut self) -> &mut DenseLayer {
        match self.net.layers.last_mut() {
            Some(Layer::Dense(d)) => d,
            _ => unreachable!("an independent model always ends in a dense layer"),
        }
    }
}

impl Parameterized for IndependentModel {
    fn params(&self) -> Vec<&Matrix> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.net.params_mut()
    }
}

impl Network for IndependentModel {
    type Cache = IndependentCache;

    fn task_kinds(&self) -> &[TaskKind] {
        &self.kinds
    }

    fn forward(
        &mut self,
        features: &Matrix,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Matrix, IndependentCache)> {
        let (logits, net) = self.net.forward(features, mode, rng)?;
        let predictions = to_output_space(&logits, &self.kinds);
        Ok((predictions.clone(), IndependentCache { net, predictions }))
    }

    fn backward(
        &self,
        cache: &IndependentCache,
        grad_out: &Matrix,
        _include_auxiliary: bool,
    ) -> Result<Vec<Matrix>> {
        if grad_out.cols() != 1 {
            return Err(Error::Dimension {
                context: "independent model output gradient",
                expected: 1,
                found: grad_out.cols(),
            });
        }
        let g = to_logit_grad(grad_out, &cache.predictions, &self.kinds);
        Ok(self.net.backward(&cache.net, &g, false)?.1)
    }

    fn relu_pattern(&self, cache: &IndependentCache) -> Vec<bool> {
        let mut out = Vec::new();
        self.net.relu_pattern(&cache.net, &mut out);
        out
    }
}
