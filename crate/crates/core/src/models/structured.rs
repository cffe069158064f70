use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::shared::{SharedCache, SharedMtlModel};
use super::{to_logit_grad, ModelConfig, Network};
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::losses::{relation_penalty, relation_penalty_grad, RegularizationConfig};
use crate::numeric::{
    sigmoid, Activation, DenseLayer, Layer, Matrix, Mode, Parameterized, Sequential,
    SequentialCache,
};
use crate::SeededRng;

/// Learned directed task relations; `weights[(i, j)]` is the strength with
/// which task `j` informs task `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRelationGraph {
    pub task_names: Vec<String>,
    pub weights: Matrix,
}

impl TaskRelationGraph {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    /// Off-diagonal entries in row-major order.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.weights.rows();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    out.push(self.weights.get(i, j));
                }
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.weights.rows())
            .map(|i| self.weights.get(i, i))
            .sum()
    }
}

/// Shared MTL plus task embeddings, a two-layer relation GCN, an edge
/// predictor and per-task fusion networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredMtlModel {
    pub shared: SharedMtlModel,
    pub embeddings: Matrix,
    pub gcn1: Sequential,
    pub gcn2: Sequential,
    pub edge: Sequential,
    pub fusion: Vec<Sequential>,
    pub alpha: f64,
    pub stop_gradient: bool,
    pub regularization: RegularizationConfig,
}

#[derive(Debug, Clone)]
struct RelationCache {
    gcn1: SequentialCache,
    gcn2: SequentialCache,
    refined: Matrix,
    edge: SequentialCache,
    weights: Matrix,
}

#[derive(Debug, Clone)]
pub struct StructuredCache {
    pub shared: SharedCache,
    relation: RelationCache,
    /// `fusion_out[i][j]` is `g_i` applied to task `j`'s base prediction.
    fusion_out: Vec<Vec<Option<(Matrix, SequentialCache)>>>,
    pub predictions: Matrix,
}

impl StructuredCache {
    pub fn relations(&self) -> &Matrix {
        &self.relation.weights
    }

    pub fn base_predictions(&self) -> &Matrix {
        &self.shared.predictions
    }
}

impl StructuredMtlModel {
    pub fn new(
        input_dim: usize,
        kinds: &[TaskKind],
        config: &ModelConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if kinds.len() < 2 {
            return Err(Error::Config(format!(
                "a task relation graph needs at least 2 tasks, got {}",
                kinds.len()
            )));
        }
        config.regularization.validate()?;
        let shared = SharedMtlModel::new(input_dim, kinds, config, rng);
        let t = kinds.len();
        let e = config.embedding_dim;
        let embeddings = Matrix::from_vec(
            t,
            e,
            (0..t * e).map(|_| StandardNormal.sample(rng)).collect(),
        )?;
        let gcn1 = Sequential::new(vec![
            Layer::Dense(DenseLayer::new(e, config.gcn_hidden, rng)),
            Layer::Activation(Activation::Relu),
        ]);
        let gcn2 = Sequential::new(vec![Layer::Dense(DenseLayer::new(
            config.gcn_hidden,
            config.gcn_hidden,
            rng,
        ))]);
        let edge = Sequential::mlp(&[2 * config.gcn_hidden, config.edge_hidden, 1], rng);
        let fusion = (0..t)
            .map(|_| Sequential::mlp(&[1, config.fusion_hidden, 1], rng))
            .collect();
        Ok(Self {
            shared,
            embeddings,
            gcn1,
            gcn2,
            edge,
            fusion,
            alpha: config.alpha,
            stop_gradient: config.stop_gradient,
            regularization: config.regularization,
        })
    }

    fn task_count_internal(&self) -> usize {
        self.shared.kinds.len()
    }

    /// `Â · m` with `Â = (1 − I) / (T − 1)`, the symmetric-normalized
    /// adjacency of the complete graph without self-loops. `Â` is symmetric,
    /// so this also serves the backward pass.
    fn propagate(m: &Matrix) -> Matrix {
        let t = m.rows();
        let norm = 1.0 / (t as f64 - 1.0);
        let total = m.column_sums();
        let mut out = Matrix::zeros(t, m.cols());
        for i in 0..t {
            for ((o, s), v) in out
                .row_mut(i)
                .iter_mut()
                .zip(total.as_slice())
                .zip(m.row(i))
            {
                *o = (s - v) * norm;
            }
        }
        out
    }

    fn relation_forward(&mut self) -> Result<RelationCache> {
        let t = self.task_count_internal();
        // The relation branch has no dropout, so this generator is never drawn from.
        let mut rng = crate::rng_for(0, 0);
        let propagated1 = Self::propagate(&self.embeddings);
        let (hidden, gcn1) = self.gcn1.forward(&propagated1, Mode::Eval, &mut rng)?;
        let propagated2 = Self::propagate(&hidden);
        let (refined, gcn2) = self.gcn2.forward(&propagated2, Mode::Eval, &mut rng)?;
        let mut pairs = Vec::with_capacity(t * t * 2 * refined.cols());
        for i in 0..t {
            for j in 0..t {
                pairs.extend_from_slice(refined.row(i));
                pairs.extend_from_slice(refined.row(j));
            }
        }
        let pairs = Matrix::from_vec(t * t, 2 * refined.cols(), pairs)?;
        let (logits, edge) = self.edge.forward(&pairs, Mode::Eval, &mut rng)?;
        let weights = Matrix::from_vec(
            t,
            t,
            logits.as_slice().iter().map(|&z| sigmoid(z)).collect(),
        )?;
        Ok(RelationCache {
            gcn1,
            gcn2,
            refined,
            edge,
            weights,
        })
    }

    /// Gradients for embeddings, gcn1, gcn2 and edge from d loss / d W.
    fn relation_backward(&self, cache: &RelationCache, grad_w: &Matrix) -> Result<Vec<Matrix>> {
        let t = self.task_count_internal();
        let mut grad_logits = Vec::with_capacity(t * t);
        for (g, w) in grad_w.as_slice().iter().zip(cache.weights.as_slice()) {
            grad_logits.push(g * w * (1.0 - w));
        }
        let grad_logits = Matrix::column_vector(grad_logits);
        let (grad_pairs, edge_grads) = self.edge.backward(&cache.edge, &grad_logits, true)?;
        let grad_pairs = grad_pairs.expect("input gradient requested");
        let width = cache.refined.cols();
        let mut grad_refined = Matrix::zeros(t, width);
        for i in 0..t {
            for j in 0..t {
                let row = grad_pairs.row(i * t + j);
                for (o, v) in grad_refined.row_mut(i).iter_mut().zip(&row[..width]) {
                    *o += v;
                }
                for (o, v) in grad_refined.row_mut(j).iter_mut().zip(&row[width..]) {
                    *o += v;
                }
            }
        }
        let (grad_p2, gcn2_grads) = self.gcn2.backward(&cache.gcn2, &grad_refined, true)?;
        let grad_hidden = Self::propagate(&grad_p2.expect("input gradient requested"));
        let (grad_p1, gcn1_grads) = self.gcn1.backward(&cache.gcn1, &grad_hidden, true)?;
        let grad_embeddings = Self::propagate(&grad_p1.expect("input gradient requested"));
        let mut out = vec![grad_embeddings];
        out.extend(gcn1_grads);
        out.extend(gcn2_grads);
        out.extend(edge_grads);
        Ok(out)
    }

    pub fn compute_task_relation_matrix(&self, task_names: &[String]) -> Result<TaskRelationGraph> {
        let weights = self.clone().relation_forward()?.weights;
        Ok(TaskRelationGraph {
            task_names: task_names.to_vec(),
            weights,
        })
    }

    fn kinds(&self) -> &[TaskKind] {
        &self.shared.kinds
    }
}

impl Parameterized for StructuredMtlModel {
    fn params(&self) -> Vec<&Matrix> {
        let mut out = self.shared.params();
        out.push(&self.embeddings);
        out.extend(self.gcn1.params());
        out.extend(self.gcn2.params());
        out.extend(self.edge.params());
        for f in &self.fusion {
            out.extend(f.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.shared.params_mut();
        out.push(&mut self.embeddings);
        out.extend(self.gcn1.params_mut());
        out.extend(self.gcn2.params_mut());
        out.extend(self.edge.params_mut());
        for f in &mut self.fusion {
            out.extend(f.params_mut());
        }
        out
    }
}

impl Network for StructuredMtlModel {
    type Cache = StructuredCache;

    fn task_kinds(&self) -> &[TaskKind] {
        self.kinds()
    }

    fn forward(
        &mut self,
        features: &Matrix,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Matrix, StructuredCache)> {
        let shared = self.shared.forward_cached(features, mode, rng)?;
        let relation = self.relation_forward()?;
        let t = self.task_count_internal();
        let mut fusion_out: Vec<Vec<Option<(Matrix, SequentialCache)>>> = vec![vec![None; t]; t];
        let predictions = if self.alpha == 0.0 {
            shared.predictions.clone()
        } else {
            let mut fused = shared.logits.clone();
            for i in 0..t {
                for j in (0..t).filter(|&j| j != i) {
                    let input = Matrix::column_vector(shared.predictions.column(j));
                    let (g, cache) = self.fusion[i].forward(&input, mode, rng)?;
                    let scale = self.alpha * relation.weights.get(i, j);
                    for (r, gv) in g.as_slice().iter().enumerate() {
                        fused.set(r, i, fused.get(r, i) + scale * gv);
                    }
                    fusion_out[i][j] = Some((g, cache));
                }
            }
            super::to_output_space(&fused, self.kinds())
        };
        Ok((
            predictions.clone(),
            StructuredCache {
                shared,
                relation,
                fusion_out,
                predictions,
            },
        ))
    }

    fn backward(
        &self,
        cache: &StructuredCache,
        grad_out: &Matrix,
        include_auxiliary: bool,
    ) -> Result<Vec<Matrix>> {
        let t = self.task_count_internal();
        if grad_out.cols() != t {
            return Err(Error::Dimension {
                context: "structured model output gradient",
                expected: t,
                found: grad_out.cols(),
            });
        }
        let grad_fused = to_logit_grad(grad_out, &cache.predictions, self.kinds());
        let mut grad_base_logits = grad_fused.clone();
        let mut grad_w = if include_auxiliary {
            relation_penalty_grad(&cache.relation.weights, &self.regularization)
        } else {
            Matrix::zeros(t, t)
        };
        let mut fusion_grads: Vec<Vec<Matrix>> = self
            .fusion
            .iter()
            .map(|f| {
                f.params()
                    .iter()
                    .map(|p| Matrix::zeros(p.rows(), p.cols()))
                    .collect()
            })
            .collect();
        let base = &cache.shared.predictions;
        for i in 0..t {
            let gi = grad_fused.column(i);
            for j in (0..t).filter(|&j| j != i) {
                let Some((g, fc)) = &cache.fusion_out[i][j] else {
                    continue;
                };
                let w = cache.relation.weights.get(i, j);
                let dw: f64 = gi.iter().zip(g.as_slice()).map(|(a, b)| a * b).sum();
                grad_w.set(i, j, grad_w.get(i, j) + self.alpha * dw);
                let dg = Matrix::column_vector(gi.iter().map(|v| v * self.alpha * w).collect());
                let (dx, grads) = self.fusion[i].backward(fc, &dg, !self.stop_gradient)?;
                for (acc, g) in fusion_grads[i].iter_mut().zip(&grads) {
                    acc.add_scaled(g, 1.0);
                }
                if let Some(dx) = dx {
                    for r in 0..dx.rows() {
                        let mut d = dx.get(r, 0);
                        if self.kinds()[j] == TaskKind::Classification {
                            let p = base.get(r, j);
                            d *= p * (1.0 - p);
                        }
                        grad_base_logits.set(r, j, grad_base_logits.get(r, j) + d);
                    }
                }
            }
        }
        let mut out = self
            .shared
            .backward_logits(&cache.shared, &grad_base_logits)?;
        out.extend(self.relation_backward(&cache.relation, &grad_w)?);
        out.extend(fusion_grads.into_iter().flatten());
        Ok(out)
    }

    fn relu_pattern(&self, cache: &StructuredCache) -> Vec<bool> {
        let mut out = self.shared.relu_pattern(&cache.shared);
        self.gcn1.relu_pattern(&cache.relation.gcn1, &mut out);
        self.edge.relu_pattern(&cache.relation.edge, &mut out);
        for (fusion, row) in self.fusion.iter().zip(&cache.fusion_out) {
            for (_, fc) in row.iter().flatten() {
                fusion.relu_pattern(fc, &mut out);
            }
        }
        out
    }

    fn auxiliary_loss(&self, cache: &StructuredCache) -> f64 {
        relation_penalty(&cache.relation.weights, &self.regularization)
    }

    fn auxiliary_terms(&self, cache: &StructuredCache) -> Vec<f64> {
        let reg = &self.regularization;
        let w = &cache.relation.weights;
        let sign = match reg.trace_sign {
            crate::losses::TraceSign::Reward => 1.0,
            crate::losses::TraceSign::Penalize => -1.0,
        };
        let mut terms = vec![reg.lambda2];
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                let mut term = reg.lambda1 * w.get(i, j).abs();
                if i == j {
                    term -= reg.lambda2 * sign * w.get(i, i);
                }
                terms.push(term);
            }
        }
        terms
    }

    fn backbone_groups(&self) -> usize {
        self.shared.backbone_groups()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_for;

    fn kinds() -> Vec<TaskKind> {
        vec![
            TaskKind::Regression,
            TaskKind::Regression,
            TaskKind::Classification,
        ]
    }

    fn inputs() -> Matrix {
        Matrix::from_vec(6, 21, (0..126).map(|i| (i as f64 * 0.61).cos()).collect()).unwrap()
    }

    fn names() -> Vec<String> {
        ["a", "b", "c"].map(String::from).to_vec()
    }

    #[test]
    fn relation_entries_are_probabilities() {
        let m = StructuredMtlModel::new(21, &kinds(), &ModelConfig::default(), &mut rng_for(1, 0))
            .unwrap();
        let g = m.compute_task_relation_matrix(&names()).unwrap();
        assert_eq!((g.weights.rows(), g.weights.cols()), (3, 3));
        assert!(g
            .weights
            .as_slice()
            .iter()
            .all(|&w| (0.0..=1.0).contains(&w)));
        assert_eq!(g.off_diagonal().len(), 6);
    }

    #[test]
    fn identical_embeddings_give_symmetric_relations() {
        let mut m =
            StructuredMtlModel::new(21, &kinds(), &ModelConfig::default(), &mut rng_for(2, 0))
                .unwrap();
        let row = m.embeddings.row(0).to_vec();
        for i in 1..3 {
            m.embeddings.row_mut(i).copy_from_slice(&row);
        }
        let w = m.compute_task_relation_matrix(&names()).unwrap().weights;
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w.get(i, j), w.get(j, i));
            }
        }
    }

    #[test]
    fn zero_alpha_matches_shared_model_bitwise() {
        let config = ModelConfig {
            alpha: 0.0,
            ..ModelConfig::default()
        };
        let mut m = StructuredMtlModel::new(21, &kinds(), &config, &mut rng_for(3, 0)).unwrap();
        let mut shared = m.shared.clone();
        for mode in [Mode::Eval, Mode::Train] {
            let (a, _) = m.forward(&inputs(), mode, &mut rng_for(11, 0)).unwrap();
            let (b, _) = shared
                .forward(&inputs(), mode, &mut rng_for(11, 0))
                .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_relations_leave_base_predictions() {
        let mut m =
            StructuredMtlModel::new(21, &kinds(), &ModelConfig::default(), &mut rng_for(4, 0))
                .unwrap();
        let last = m.edge.layers.len() - 1;
        if let Layer::Dense(d) = &mut m.edge.layers[last] {
            d.weights.fill(0.0);
            d.bias.fill(-800.0);
        }
        let (fused, cache) = m
            .forward(&inputs(), Mode::Eval, &mut rng_for(0, 0))
            .unwrap();
        assert!(cache.relations().as_slice().iter().all(|&w| w == 0.0));
        assert_eq!(&fused, cache.base_predictions());
    }

    #[test]
    fn hand_evaluated_single_pair() {
        // Two regression tasks; f_0 = 0.5, w_01 = 1, g_0 ≡ 0.3, α = 0.1.
        let two = [TaskKind::Regression, TaskKind::Regression];
        let mut m =
            StructuredMtlModel::new(21, &two, &ModelConfig::default(), &mut rng_for(5, 0)).unwrap();
        let set_constant = |net: &mut Sequential, value: f64| {
            let last = net.layers.len() - 1;
            if let Layer::Dense(d) = &mut net.layers[last] {
                d.weights.fill(0.0);
                d.bias.fill(value);
            }
        };
        set_constant(&mut m.shared.heads[0], 0.5);
        set_constant(&mut m.shared.heads[1], -2.0);
        set_constant(&mut m.fusion[0], 0.3);
        set_constant(&mut m.fusion[1], 0.0);
        set_constant(&mut m.edge, 800.0);
        let (fused, cache) = m
            .forward(&inputs(), Mode::Eval, &mut rng_for(0, 0))
            .unwrap();
        assert_eq!(cache.relations().get(0, 1), 1.0);
        for r in 0..fused.rows() {
            assert!((fused.get(r, 0) - 0.53).abs() < 1e-12);
            assert_eq!(fused.get(r, 1), -2.0);
        }
    }

    #[test]
    fn needs_two_tasks() {
        let err = StructuredMtlModel::new(
            21,
            &[TaskKind::Regression],
            &ModelConfig::default(),
            &mut rng_for(6, 0),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn auxiliary_loss_is_the_relation_penalty() {
        let mut m =
            StructuredMtlModel::new(21, &kinds(), &ModelConfig::default(), &mut rng_for(7, 0))
                .unwrap();
        let (_, cache) = m
            .forward(&inputs(), Mode::Eval, &mut rng_for(0, 0))
            .unwrap();
        let w = cache.relations().clone();
        let expected = 0.01 * w.as_slice().iter().sum::<f64>()
            + 0.1 * (1.0 - (w.get(0, 0) + w.get(1, 1) + w.get(2, 2)));
        assert!((m.auxiliary_loss(&cache) - expected).abs() < 1e-12);
    }
}
