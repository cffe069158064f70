use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Adam moment estimates for one parameter set.
///
/// Learning rate and weight decay are supplied per step so that schedulers
/// can own them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let shapes: Vec<(usize, usize)> =
            params.into_iter().map(|p| (p.rows(), p.cols())).collect();
        Self {
            first_moment: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second_moment: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction.
///
/// Weight decay is an L2 term folded into the gradient (`g + wd·θ`) before
/// the moment updates. A non-finite gradient aborts the step without
/// touching parameters or state.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Dimension {
            context: "adam parameter groups",
            expected: params.len(),
            found: grads.len().min(state.first_moment.len()),
        });
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[k].len() {
            return Err(Error::Dimension {
                context: "adam parameter shape",
                expected: p.len(),
                found: g.len(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter group {k} contains non-finite entries"
            )));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first_moment[k].as_mut_slice();
        let v = state.second_moment[k].as_mut_slice();
        for (((theta, &grad), m), v) in p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let grad = grad + weight_decay * *theta;
            *m = b1 * *m + (1.0 - b1) * grad;
            *v = b2 * *v + (1.0 - b2) * grad * grad;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *theta -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::row_vector(vec![v])
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Matrix::row_vector(vec![0.3, -1.2, 5.0]);
        let before = p.clone();
        let mut state = AdamState::new([&p]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[Matrix::zeros(1, 3)], &mut state, 1e-3, 0.0).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(state.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(2.0);
        let mut state = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[scalar(1.0)], &mut state, 0.001, 0.0).unwrap();
        // m_hat / sqrt(v_hat) = 1 up to epsilon
        let delta = p.as_slice()[0] - 2.0;
        assert!((delta + 0.001).abs() < 1e-10, "{delta}");
    }

    #[test]
    fn updates_decay_after_gradient_vanishes() {
        let mut p = scalar(0.0);
        let mut state = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[scalar(1.0)], &mut state, 0.01, 0.0).unwrap();
        let mut prev = p.as_slice()[0];
        let mut deltas = Vec::new();
        for _ in 0..2 {
            adam_step(&mut [&mut p], &[scalar(0.0)], &mut state, 0.01, 0.0).unwrap();
            let now = p.as_slice()[0];
            deltas.push((now - prev).abs());
            prev = now;
        }
        // step 2: m = 0.09, v = 0.000999; m_hat = 0.09/0.19, v_hat = 0.000999/0.001999
        let m_hat: f64 = 0.09 / (1.0 - 0.81);
        let v_hat: f64 = 0.000999 / (1.0 - 0.998001);
        let expected = 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((deltas[0] - expected).abs() < 1e-12);
        assert!(deltas[1] < deltas[0]);
    }

    #[test]
    fn weight_decay_acts_as_l2_gradient() {
        let mut a = scalar(3.0);
        let mut b = scalar(3.0);
        let mut sa = AdamState::new([&a]);
        let mut sb = AdamState::new([&b]);
        adam_step(&mut [&mut a], &[scalar(0.5)], &mut sa, 0.01, 0.1).unwrap();
        adam_step(
            &mut [&mut b],
            &[scalar(0.5 + 0.1 * 3.0)],
            &mut sb,
            0.01,
            0.0,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar(1.0);
        let mut state = AdamState::new([&p]);
        let err = adam_step(&mut [&mut p], &[scalar(f64::NAN)], &mut state, 0.1, 0.0);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p, scalar(1.0));
        assert_eq!(state.step_count, 0);
    }
}
