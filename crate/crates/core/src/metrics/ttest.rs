use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Significance level for [`TTestResult::significant`].
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// `None` when the differences have zero variance.
    pub t_statistic: Option<f64>,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub significant: bool,
    /// The differences had zero variance; `p` is then 1 if they are all
    /// zero and 0 otherwise.
    pub degenerate: bool,
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-tailed p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Paired two-tailed t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "paired t-test",
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "a paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let p_value = if mean == 0.0 { 1.0 } else { 0.0 };
        return Ok(TTestResult {
            t_statistic: None,
            degrees_of_freedom: df,
            p_value,
            significant: p_value < ALPHA,
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let p_value = student_t_two_tailed(t, df as f64);
    Ok(TTestResult {
        t_statistic: Some(t),
        degrees_of_freedom: df,
        p_value,
        significant: p_value < ALPHA,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        for (n, fact) in [(1.0, 1.0f64), (2.0, 1.0), (5.0, 24.0), (11.0, 3_628_800.0)] {
            assert!((ln_gamma(n) - fact.ln()).abs() < 1e-12, "{n}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn reference_example() {
        let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 2.0, 4.0, 4.0, 6.0]).unwrap();
        assert_eq!(r.degrees_of_freedom, 4);
        assert!((r.t_statistic.unwrap() - -2.449_489_742_783_178).abs() < 1e-12);
        assert!((r.p_value - 0.070_483_996_910_219_93).abs() < 1e-10);
        assert!(!r.significant && !r.degenerate);
    }

    #[test]
    fn p_values_against_frozen_reference() {
        // Two-tailed values from a reference statistics library.
        let cases = [
            (2.776_445_105_197_793, 4.0, 0.05),
            (2.8, 4.0, 0.048_811_550_548_884_13),
            (1.0, 1.0, 0.5),
            (0.5, 10.0, 0.627_893_605_742_972_9),
            (3.0, 29.0, 0.005_499_192_133_903_406_6),
            (-1.7, 7.0, 0.132_928_896_782_555_18),
        ];
        for (t, df, p) in cases {
            assert!(
                (student_t_two_tailed(t, df) - p).abs() < 1e-10,
                "t={t} df={df}"
            );
        }
    }

    #[test]
    fn just_above_the_critical_value_is_significant() {
        // Zero-mean spread with sample sd 0.2, shifted so that t = 2.78 (df 4).
        let spread = [0.2, -0.2, 0.2, -0.2, 0.0];
        let sd = (0.16f64 / 4.0).sqrt();
        let mean = 2.78 * sd / 5f64.sqrt();
        let a: Vec<f64> = spread.iter().map(|v| v + mean).collect();
        let r = paired_t_test(&a, &[0.0; 5]).unwrap();
        assert!((r.t_statistic.unwrap() - 2.78).abs() < 1e-9);
        assert!(r.significant && r.p_value > 0.049);
    }

    #[test]
    fn degenerate_differences() {
        let same = paired_t_test(&[0.3, 0.4, 0.5], &[0.3, 0.4, 0.5]).unwrap();
        assert!(same.degenerate);
        assert_eq!(same.p_value, 1.0);
        let shifted = paired_t_test(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap();
        assert!(shifted.degenerate);
        assert_eq!(shifted.p_value, 0.0);
        assert!(shifted.significant);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    proptest! {
        #[test]
        fn swapping_samples_negates_t(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..12)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = paired_t_test(&a, &b).unwrap();
            let ba = paired_t_test(&b, &a).unwrap();
            prop_assume!(!ab.degenerate);
            let (t_ab, t_ba) = (ab.t_statistic.unwrap(), ba.t_statistic.unwrap());
            prop_assert!((t_ab + t_ba).abs() <= 1e-9 * t_ab.abs().max(1.0));
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
        }
    }
}
