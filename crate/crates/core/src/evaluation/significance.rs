use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Outcome of a two-sided paired t-test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Every difference was the same nonzero value, so the variance is zero
    /// and `t` is infinite.
    pub degenerate: bool,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Two-sided paired t-test of `a` against `b` (positive `t` means `a` is larger).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::data(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::data("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(TTest {
                t: 0.0,
                p_value: 1.0,
                significant: false,
                degenerate: false,
            });
        }
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            p_value: 0.0,
            significant: true,
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::data(format!("t distribution: {e}")))?;
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        p_value,
        significant: p_value < SIGNIFICANCE_LEVEL,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `Γ((ν+1)/2) / Γ(ν/2)` for integer ν by the recurrence
    /// `r(ν+2) = r(ν)·(ν+1)/ν` from r(1) = 1/√π and r(2) = √π/2.
    fn gamma_ratio(nu: u32) -> f64 {
        let pi = std::f64::consts::PI;
        let (mut r, mut v) = if nu % 2 == 1 {
            (1.0 / pi.sqrt(), 1)
        } else {
            (pi.sqrt() / 2.0, 2)
        };
        while v < nu {
            r *= (v + 1) as f64 / v as f64;
            v += 2;
        }
        r
    }

    /// Two-sided p by composite Simpson integration of the t density on [0, |t|].
    fn p_oracle(t: f64, nu: u32) -> f64 {
        let c = gamma_ratio(nu) / (nu as f64 * std::f64::consts::PI).sqrt();
        let f = |x: f64| c * (1.0 + x * x / nu as f64).powf(-(nu as f64 + 1.0) / 2.0);
        let n = 200_000;
        let h = t.abs() / n as f64;
        let mut s = f(0.0) + f(t.abs());
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn identical_samples_not_significant() {
        let a = [0.3, 0.5, 0.9];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!(
            (r.p_value, r.significant, r.degenerate),
            (1.0, false, false)
        );
    }

    #[test]
    fn constant_shift_is_degenerate() {
        let r = paired_t_test(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.degenerate && r.significant);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn textbook_example() {
        let a: Vec<f64> = (1..=10).map(f64::from).collect();
        let r = paired_t_test(&a, &[0.0; 10]).unwrap();
        assert!((r.t - 5.7446).abs() < 1e-4, "{}", r.t);
        assert!(r.p_value < 0.001);
        assert!((r.p_value - p_oracle(r.t, 9)).abs() < 1e-6);
    }

    #[test]
    fn p_values_match_quadrature_oracle() {
        for n in [5usize, 30, 100] {
            for shift in [0.05, 0.2, 0.6] {
                let a: Vec<f64> = (0..n)
                    .map(|i| ((i * 37 % 11) as f64 / 10.0) + shift)
                    .collect();
                let b: Vec<f64> = (0..n).map(|i| (i * 53 % 13) as f64 / 12.0).collect();
                let r = paired_t_test(&a, &b).unwrap();
                let o = p_oracle(r.t, (n - 1) as u32);
                assert!(
                    (r.p_value - o).abs() < 1e-6,
                    "n={n} t={} {} vs {o}",
                    r.t,
                    r.p_value
                );
            }
        }
    }

    #[test]
    fn input_errors() {
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }
}
