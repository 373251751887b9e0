use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_difference: f64,
    /// `None` when the differences have zero variance.
    pub t: Option<f64>,
    pub df: usize,
    pub p_value: f64,
    pub significant: bool,
}

/// Two-sided paired t-test on `b − a`.
///
/// Zero-variance differences give p = 0 for a nonzero mean difference and
/// p = 1 otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Validation("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let df = n - 1;
    if var == 0.0 {
        let p_value = if mean != 0.0 { 0.0 } else { 1.0 };
        return Ok(TTestResult {
            mean_difference: mean,
            t: None,
            df,
            p_value,
            significant: p_value < SIGNIFICANCE_LEVEL,
        });
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTestResult {
        mean_difference: mean,
        t: Some(t),
        df,
        p_value,
        significant: p_value < SIGNIFICANCE_LEVEL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [0.3, 0.5, 0.4];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn constant_shift() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        let r = paired_t_test(&a, &b).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.significant);
    }

    #[test]
    fn length_mismatch() {
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn textbook_critical_value() {
        // t = 2.776 is the two-sided 5% critical value at 4 degrees of freedom
        let d = 2.776_445_105_2;
        // differences with mean m and sd s give t = m / (s / √5); pick s = 1
        let base = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let sd = (2.5f64 / 4.0).sqrt();
        let shift = d * sd / 5f64.sqrt();
        let a = [0.0; 5];
        let b: Vec<f64> = base.iter().map(|x| x + shift).collect();
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t.unwrap() - d).abs() < 1e-9);
        assert!((r.p_value - 0.05).abs() < 1e-8);
    }
}
