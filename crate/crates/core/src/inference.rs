//! Wald tests and confidence intervals with standard normal critical values.
//!
//! All variance results here are asymptotic, so tests use normal rather than
//! Student-t quantiles, including at small `n`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    RobustRi,
    Conventional,
    CompleteCaseHc0,
}

/// Outcome of a two-sided Wald test of `β = null_value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub beta_hat: f64,
    pub se: f64,
    pub null_value: f64,
    pub t_stat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub reject: bool,
    /// Set when `se = 0` and `beta_hat ≠ null_value`, so `t_stat` is infinite.
    pub extreme: bool,
    pub variance_kind: VarianceKind,
}

/// `z` with `Φ(z) = 1 − α/2`.
pub fn critical_z(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Two-sided Wald test and symmetric confidence interval. `variance` is the
/// finite-sample variance of `beta_hat` (not scaled by `n`).
pub fn wald_test(beta_hat: f64, variance: f64, null_value: f64, alpha: f64, kind: VarianceKind) -> Result<TestResult> {
    let z = critical_z(alpha)?;
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::InvalidVariance(variance));
    }
    let se = variance.sqrt();
    let diff = beta_hat - null_value;
    let (t_stat, extreme) = if se > 0.0 {
        (diff / se, false)
    } else if diff == 0.0 {
        (0.0, false)
    } else {
        (diff.signum() * f64::INFINITY, true)
    };
    Ok(TestResult {
        beta_hat,
        se,
        null_value,
        t_stat,
        ci_low: beta_hat - z * se,
        ci_high: beta_hat + z * se,
        alpha,
        reject: t_stat.abs() > z,
        extreme,
        variance_kind: kind,
    })
}

impl TestResult {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}
