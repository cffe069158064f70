use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Anything exposing its trainable parameters in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl Parameterized for super::layers::Sequential {
    fn params(&self) -> Vec<&Matrix> {
        super::layers::Sequential::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        super::layers::Sequential::params_mut(self)
    }
}

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `(parameter group, element)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Entries whose step was shrunk to stay clear of a kink.
    pub reduced_steps: usize,
    /// Largest relative error within each parameter group.
    pub group_relative: Vec<f64>,
    /// Largest absolute difference within each parameter group.
    pub group_absolute: Vec<f64>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` gradients against central differences of `loss`.
///
/// `loss` must be deterministic in the parameters (dropout off, batch
/// statistics fixed or recomputed from the same batch). Every parameter
/// entry is perturbed and restored.
pub fn finite_diff_check<M: Parameterized>(
    model: &mut M,
    analytic: &[Matrix],
    step: f64,
    mut loss: impl FnMut(&mut M) -> Result<f64>,
) -> Result<GradCheck> {
    finite_diff_check_terms(model, analytic, step, |m| {
        Ok(Evaluation {
            terms: vec![loss(m)?],
            pattern: Vec::new(),
        })
    })
}

/// One evaluation of a piecewise-smooth loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    /// Additive terms whose sum is the loss.
    pub terms: Vec<f64>,
    /// On/off state of every kink (e.g. each ReLU unit) at this point.
    pub pattern: Vec<bool>,
}

/// Like [`finite_diff_check`], for a loss given as additive terms.
///
/// Each term is differenced on its own before summing, which keeps the
/// rounding of a large total out of the small differences. At the initial
/// step, differences at `h` and `h / 2` are combined by Richardson
/// extrapolation. When the kink
/// pattern at `θ ± h` differs from the one at `θ`, the step is divided by 10
/// (down to `step / 1000`) so the difference stays within one smooth piece.
pub fn finite_diff_check_terms<M: Parameterized>(
    model: &mut M,
    analytic: &[Matrix],
    step: f64,
    mut eval: impl FnMut(&mut M) -> Result<Evaluation>,
) -> Result<GradCheck> {
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    if shapes.len() != analytic.len() {
        return Err(Error::Dimension {
            context: "gradient check groups",
            expected: shapes.len(),
            found: analytic.len(),
        });
    }
    let base_pattern = eval(model)?.pattern;
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        reduced_steps: 0,
        group_relative: vec![0.0; shapes.len()],
        group_absolute: vec![0.0; shapes.len()],
    };
    for (k, &len) in shapes.iter().enumerate() {
        if analytic[k].len() != len {
            return Err(Error::Dimension {
                context: "gradient check shape",
                expected: len,
                found: analytic[k].len(),
            });
        }
        for e in 0..len {
            let original = model.params_mut()[k].as_slice()[e];
            let mut h = step;
            let numeric = loop {
                let mut diff = |delta: f64| -> Result<(f64, bool)> {
                    model.params_mut()[k].as_mut_slice()[e] = original + delta;
                    let plus = eval(model)?;
                    model.params_mut()[k].as_mut_slice()[e] = original - delta;
                    let minus = eval(model)?;
                    model.params_mut()[k].as_mut_slice()[e] = original;
                    if plus.terms.len() != minus.terms.len() {
                        return Err(Error::Usage(
                            "loss terms changed length under perturbation".into(),
                        ));
                    }
                    let d = plus
                        .terms
                        .iter()
                        .zip(&minus.terms)
                        .map(|(p, m)| p - m)
                        .sum::<f64>()
                        / (2.0 * delta);
                    Ok((
                        d,
                        plus.pattern == base_pattern && minus.pattern == base_pattern,
                    ))
                };
                let (wide, smooth_wide) = diff(h)?;
                if h < step {
                    // shrunk steps are rounding-limited; extrapolating would amplify it
                    if smooth_wide || h <= step * 1e-3 {
                        break wide;
                    }
                } else if smooth_wide {
                    let (narrow, smooth_narrow) = diff(h / 2.0)?;
                    if smooth_narrow {
                        // Richardson: cancels the h² truncation term
                        break (4.0 * narrow - wide) / 3.0;
                    }
                }
                h /= 10.0;
            };
            if h < step {
                report.reduced_steps += 1;
            }
            let err = relative_error(analytic[k].as_slice()[e], numeric);
            report.checked += 1;
            report.group_relative[k] = report.group_relative[k].max(err);
            report.group_absolute[k] =
                report.group_absolute[k].max((analytic[k].as_slice()[e] - numeric).abs());
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((k, e));
            }
        }
    }
    Ok(report)
}
