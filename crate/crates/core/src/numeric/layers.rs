use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Whether a forward pass is part of training or evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer, `out = x · weights + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `fan_in × fan_out`.
    pub weights: Matrix,
    /// `1 × fan_out`.
    pub bias: Matrix,
}

impl DenseLayer {
    /// Uniform fan-in initialization with bound `sqrt(6 / fan_in)`, zero bias.
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized by construction"),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.cols() != bias.len() {
            return Err(Error::Dimension {
                context: "dense bias",
                expected: weights.cols(),
                found: bias.len(),
            });
        }
        Ok(Self {
            weights,
            bias: Matrix::row_vector(bias),
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.fan_in() {
            return Err(Error::Dimension {
                context: "dense input",
                expected: self.fan_in(),
                found: input.cols(),
            });
        }
        let mut out = input.matmul(&self.weights)?;
        let bias = self.bias.as_slice();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Returns `(d input, d weights, d bias)`.
    fn backward(
        &self,
        input: &Matrix,
        grad_out: &Matrix,
        need_input_grad: bool,
    ) -> Result<(Option<Matrix>, Matrix, Matrix)> {
        let d_weights = input.t_matmul(grad_out)?;
        let d_bias = grad_out.column_sums();
        let d_input = if need_input_grad {
            Some(grad_out.matmul_t(&self.weights)?)
        } else {
            None
        };
        Ok((d_input, d_weights, d_bias))
    }
}

/// Batch normalization over the feature (column) axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormLayer {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(features: usize) -> Self {
        Self {
            gamma: Matrix::filled(1, features, 1.0),
            beta: Matrix::zeros(1, features),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.cols()
    }

    /// Normalizes `input`; in train mode the running statistics are updated.
    pub fn forward(&mut self, input: &Matrix, mode: Mode) -> Result<(Matrix, BatchNormCache)> {
        let n = self.features();
        if input.cols() != n {
            return Err(Error::Dimension {
                context: "batchnorm input",
                expected: n,
                found: input.cols(),
            });
        }
        let batch = input.rows();
        let (mean, inv_std) = match mode {
            Mode::Train => {
                if batch < 2 {
                    return Err(Error::DegenerateBatch(format!(
                        "batch normalization in train mode needs at least 2 samples, got {batch}"
                    )));
                }
                let mean: Vec<f64> = input
                    .column_sums()
                    .as_slice()
                    .iter()
                    .map(|s| s / batch as f64)
                    .collect();
                let mut var = vec![0.0; n];
                for r in 0..batch {
                    for ((v, x), m) in var.iter_mut().zip(input.row(r)).zip(&mean) {
                        let d = x - m;
                        *v += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= batch as f64);
                let unbias = batch as f64 / (batch as f64 - 1.0);
                for c in 0..n {
                    self.running_mean[c] =
                        (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
                    self.running_var[c] = (1.0 - self.momentum) * self.running_var[c]
                        + self.momentum * var[c] * unbias;
                }
                let inv_std: Vec<f64> = var
                    .iter()
                    .map(|v| 1.0 / (v + self.epsilon).sqrt())
                    .collect();
                (mean, inv_std)
            }
            Mode::Eval => {
                let inv_std = self
                    .running_var
                    .iter()
                    .map(|v| 1.0 / (v + self.epsilon).sqrt())
                    .collect();
                (self.running_mean.clone(), inv_std)
            }
        };
        let mut x_hat = Matrix::zeros(batch, n);
        let mut out = Matrix::zeros(batch, n);
        let gamma = self.gamma.as_slice();
        let beta = self.beta.as_slice();
        for r in 0..batch {
            let x = input.row(r);
            let xh = x_hat.row_mut(r);
            for c in 0..n {
                xh[c] = (x[c] - mean[c]) * inv_std[c];
            }
            let o = out.row_mut(r);
            for c in 0..n {
                o[c] = gamma[c] * x_hat.get(r, c) + beta[c];
            }
        }
        Ok((
            out,
            BatchNormCache {
                x_hat,
                inv_std,
                mode,
            },
        ))
    }

    /// Returns `(d input, d gamma, d beta)`.
    fn backward(&self, cache: &BatchNormCache, grad_out: &Matrix) -> (Matrix, Matrix, Matrix) {
        let (batch, n) = (grad_out.rows(), grad_out.cols());
        let mut d_gamma = vec![0.0; n];
        let mut d_beta = vec![0.0; n];
        for r in 0..batch {
            let dy = grad_out.row(r);
            let xh = cache.x_hat.row(r);
            for c in 0..n {
                d_beta[c] += dy[c];
                d_gamma[c] += dy[c] * xh[c];
            }
        }
        let gamma = self.gamma.as_slice();
        let mut d_input = Matrix::zeros(batch, n);
        match cache.mode {
            Mode::Train => {
                let inv_n = 1.0 / batch as f64;
                for r in 0..batch {
                    let dy = grad_out.row(r);
                    let xh = cache.x_hat.row(r);
                    let dx = d_input.row_mut(r);
                    for c in 0..n {
                        dx[c] = gamma[c]
                            * cache.inv_std[c]
                            * inv_n
                            * (batch as f64 * dy[c] - d_beta[c] - xh[c] * d_gamma[c]);
                    }
                }
            }
            Mode::Eval => {
                for r in 0..batch {
                    let dy = grad_out.row(r);
                    let dx = d_input.row_mut(r);
                    for c in 0..n {
                        dx[c] = dy[c] * gamma[c] * cache.inv_std[c];
                    }
                }
            }
        }
        (
            d_input,
            Matrix::row_vector(d_gamma),
            Matrix::row_vector(d_beta),
        )
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Matrix,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn activation_apply(input: &Matrix, kind: Activation) -> Matrix {
    match kind {
        Activation::Relu => input.map(|x| x.max(0.0)),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

fn activation_backward(output: &Matrix, grad_out: &Matrix, kind: Activation) -> Matrix {
    let mut d = grad_out.clone();
    match kind {
        Activation::Relu => {
            for (g, &y) in d.as_mut_slice().iter_mut().zip(output.as_slice()) {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (g, &y) in d.as_mut_slice().iter_mut().zip(output.as_slice()) {
                *g *= y * (1.0 - y);
            }
        }
    }
    d
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time,
/// so evaluation is the identity.
///
/// Returns the output and the survivor mask (1 kept, 0 dropped).
pub fn dropout_forward<R: Rng>(
    input: &Matrix,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let ones = Matrix::filled(input.rows(), input.cols(), 1.0);
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), ones));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut mask = ones;
    let mut out = input.clone();
    for (m, o) in mask.as_mut_slice().iter_mut().zip(out.as_mut_slice()) {
        if rng.random::<f64>() < rate {
            *m = 0.0;
            *o = 0.0;
        } else {
            *o *= scale;
        }
    }
    Ok((out, mask))
}

/// One stage of a [`Sequential`] stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(DenseLayer),
    BatchNorm(BatchNormLayer),
    Activation(Activation),
    Dropout { rate: f64 },
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense { input: Matrix },
    BatchNorm(BatchNormCache),
    Activation { output: Matrix },
    Dropout { mask: Matrix, scale: f64 },
}

/// Values cached by [`Sequential::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct SequentialCache {
    entries: Vec<LayerCache>,
}

/// A feed-forward stack of layers with hand-derived backpropagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// `dense → batchnorm → relu → dropout` for each hidden width.
    pub fn hidden_blocks<R: Rng>(
        input_dim: usize,
        widths: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &w in widths {
            layers.push(Layer::Dense(DenseLayer::new(fan_in, w, rng)));
            layers.push(Layer::BatchNorm(BatchNormLayer::new(w)));
            layers.push(Layer::Activation(Activation::Relu));
            layers.push(Layer::Dropout { rate: dropout });
            fan_in = w;
        }
        Self { layers }
    }

    /// `dense → relu → … → dense` without normalization or dropout.
    pub fn mlp<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Activation(Activation::Relu));
            }
            layers.push(Layer::Dense(DenseLayer::new(pair[0], pair[1], rng)));
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Dense(d) => Some(d.fan_in()),
            Layer::BatchNorm(b) => Some(b.features()),
            _ => None,
        })
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d.fan_out()),
            Layer::BatchNorm(b) => Some(b.features()),
            _ => None,
        })
    }

    pub fn set_dropout(&mut self, rate: f64) {
        for layer in &mut self.layers {
            if let Layer::Dropout { rate: r } = layer {
                *r = rate;
            }
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(&d.weights);
                    out.push(&d.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&b.gamma);
                    out.push(&b.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(&mut d.weights);
                    out.push(&mut d.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn forward<R: Rng>(
        &mut self,
        input: &Matrix,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Matrix, SequentialCache)> {
        let mut x = input.clone();
        let mut entries = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    let y = d.forward(&x)?;
                    entries.push(LayerCache::Dense { input: x });
                    x = y;
                }
                Layer::BatchNorm(b) => {
                    let (y, cache) = b.forward(&x, mode)?;
                    entries.push(LayerCache::BatchNorm(cache));
                    x = y;
                }
                Layer::Activation(kind) => {
                    x = activation_apply(&x, *kind);
                    entries.push(LayerCache::Activation { output: x.clone() });
                }
                Layer::Dropout { rate } => {
                    let (y, mask) = dropout_forward(&x, *rate, mode, rng)?;
                    let scale = if mode == Mode::Train && *rate > 0.0 {
                        1.0 / (1.0 - *rate)
                    } else {
                        1.0
                    };
                    entries.push(LayerCache::Dropout { mask, scale });
                    x = y;
                }
            }
        }
        Ok((x, SequentialCache { entries }))
    }

    /// Appends the on/off state of every ReLU unit recorded in `cache`.
    pub fn relu_pattern(&self, cache: &SequentialCache, out: &mut Vec<bool>) {
        for (layer, entry) in self.layers.iter().zip(&cache.entries) {
            if let (Layer::Activation(Activation::Relu), LayerCache::Activation { output }) =
                (layer, entry)
            {
                out.extend(output.as_slice().iter().map(|&v| v > 0.0));
            }
        }
    }

    /// Backpropagates `grad_out` through the stack.
    ///
    /// Returns the gradient with respect to the input (when requested) and
    /// one gradient per parameter, aligned with [`Sequential::params`].
    pub fn backward(
        &self,
        cache: &SequentialCache,
        grad_out: &Matrix,
        need_input_grad: bool,
    ) -> Result<(Option<Matrix>, Vec<Matrix>)> {
        if cache.entries.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "backward called with a cache of {} entries for {} layers",
                cache.entries.len(),
                self.layers.len()
            )));
        }
        let first_param_layer = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Dense(_) | Layer::BatchNorm(_)));
        let mut grads_rev: Vec<Matrix> = Vec::new();
        let mut g = grad_out.clone();
        for (idx, (layer, entry)) in self.layers.iter().zip(&cache.entries).enumerate().rev() {
            let input_needed = need_input_grad || first_param_layer.is_some_and(|p| idx > p);
            match (layer, entry) {
                (Layer::Dense(d), LayerCache::Dense { input }) => {
                    let (dx, dw, db) = d.backward(input, &g, input_needed)?;
                    grads_rev.push(db);
                    grads_rev.push(dw);
                    if let Some(dx) = dx {
                        g = dx;
                    }
                }
                (Layer::BatchNorm(b), LayerCache::BatchNorm(c)) => {
                    let (dx, dgamma, dbeta) = b.backward(c, &g);
                    grads_rev.push(dbeta);
                    grads_rev.push(dgamma);
                    g = dx;
                }
                (Layer::Activation(kind), LayerCache::Activation { output }) => {
                    g = activation_backward(output, &g, *kind);
                }
                (Layer::Dropout { .. }, LayerCache::Dropout { mask, scale }) => {
                    for (gv, m) in g.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                        *gv *= m * scale;
                    }
                }
                _ => {
                    return Err(Error::Usage(format!(
                        "cache entry {idx} does not match its layer"
                    )))
                }
            }
        }
        grads_rev.reverse();
        Ok((need_input_grad.then_some(g), grads_rev))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_for;

    #[test]
    fn dense_forward_examples() {
        let ident = DenseLayer::from_parts(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        let x = Matrix::row_vector(vec![1.0, 2.0]);
        assert_eq!(ident.forward(&x).unwrap().as_slice(), &[1.0, 2.0]);

        let mut rng = rng_for(1, 0);
        let mut any = DenseLayer::new(2, 2, &mut rng);
        any.bias = Matrix::row_vector(vec![3.0, -1.0]);
        let zero = Matrix::row_vector(vec![0.0, 0.0]);
        assert_eq!(any.forward(&zero).unwrap().as_slice(), &[3.0, -1.0]);

        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let layer = DenseLayer::from_parts(w, vec![0.5, 0.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().as_slice(), &[3.5, 2.0]);

        assert!(matches!(
            layer.forward(&Matrix::zeros(1, 3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn activation_examples() {
        let x = Matrix::row_vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(
            activation_apply(&x, Activation::Relu).as_slice(),
            &[0.0, 0.0, 2.0]
        );
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_examples() {
        let mut bn = BatchNormLayer::new(1);
        bn.beta = Matrix::row_vector(vec![2.0]);
        let (y, _) = bn
            .forward(&Matrix::column_vector(vec![5.0, 5.0]), Mode::Train)
            .unwrap();
        assert_eq!(y.as_slice(), &[2.0, 2.0]);

        let mut bn = BatchNormLayer::new(1);
        bn.epsilon = 0.0;
        let (y, _) = bn
            .forward(&Matrix::column_vector(vec![0.0, 2.0]), Mode::Train)
            .unwrap();
        assert_eq!(y.as_slice(), &[-1.0, 1.0]);
        // running stats: mean 0.1 * 1, var 0.9 * 1 + 0.1 * 2 (unbiased)
        assert!((bn.running_mean[0] - 0.1).abs() < 1e-15);
        assert!((bn.running_var[0] - 1.1).abs() < 1e-15);

        let mut bn = BatchNormLayer::new(3);
        bn.epsilon = 0.0;
        let x = Matrix::from_rows(&[vec![0.3, -2.0, 7.0]]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y, x);

        let mut bn = BatchNormLayer::new(1);
        assert!(matches!(
            bn.forward(&Matrix::zeros(1, 1), Mode::Train),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut rng = rng_for(3, 0);
        let data: Vec<f64> = (0..64 * 5).map(|_| rng.random_range(-4.0..9.0)).collect();
        let x = Matrix::from_vec(64, 5, data).unwrap();
        let mut bn = BatchNormLayer::new(5);
        bn.epsilon = 1e-12;
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..5 {
            let col = y.column(c);
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dropout_examples() {
        let mut rng = rng_for(5, 0);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let (y, mask) = dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.as_slice().iter().all(|&m| m == 1.0));
        let (y, _) = dropout_forward(&x, 0.3, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_expectation_matches_input() {
        let mut rng = rng_for(11, 0);
        let x = Matrix::row_vector(vec![1.0, -2.5, 4.0]);
        let draws = 10_000;
        let mut acc = vec![0.0; 3];
        for _ in 0..draws {
            let (y, _) = dropout_forward(&x, 0.3, Mode::Train, &mut rng).unwrap();
            for (a, v) in acc.iter_mut().zip(y.as_slice()) {
                *a += v;
            }
        }
        for (a, x) in acc.iter().zip(x.as_slice()) {
            let mean = a / draws as f64;
            assert!((mean - x).abs() <= 0.02 * x.abs(), "{mean} vs {x}");
        }
    }

    #[test]
    fn backward_with_mismatched_cache_is_usage_error() {
        let mut rng = rng_for(2, 0);
        let mut a = Sequential::mlp(&[3, 4, 1], &mut rng);
        let b = Sequential::mlp(&[3, 1], &mut rng);
        let (_, cache) = a
            .forward(&Matrix::zeros(2, 3), Mode::Eval, &mut rng)
            .unwrap();
        assert!(matches!(
            b.backward(&cache, &Matrix::zeros(2, 1), false),
            Err(Error::Usage(_))
        ));
    }
}
