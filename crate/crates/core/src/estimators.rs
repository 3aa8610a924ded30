//! Point estimators: complete-case first stage, plain 2SLS, complete-case
//! 2SLS and 2SLS on the regression-imputed regressor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{Projection, RANK_TOLERANCE};
use crate::model::{self, IVDataset, ImputedDataset, SplitDataset};
use crate::variance;

/// First-stage regression of `x0` on `Z0`, complete cases only.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageFit {
    pub pi_cc: DVector<f64>,
    /// `x0 − Z0 π̂_CC`.
    pub residuals_cc: DVector<f64>,
    /// Homoskedastic Wald F for `π = 0`: `(π̂'Z0'Z0π̂ / L) / (RSS / (n0 − L))`.
    /// Infinite for an exact, nonzero fit.
    pub f_statistic: f64,
    pub n0: usize,
    pub l: usize,
}

pub fn first_stage(s: &SplitDataset) -> Result<FirstStageFit> {
    let (n0, l) = (s.n0(), s.l());
    if n0 <= l {
        return Err(Error::TooFewCompleteCases { n0, l });
    }
    let pi_cc = Projection::new(s.z0())?.coefficients(s.x0());
    let fitted = s.z0() * &pi_cc;
    let residuals_cc = s.x0() - &fitted;
    let ess = fitted.norm_squared();
    let rss = residuals_cc.norm_squared();
    let f_statistic = if rss > 0.0 {
        (ess / l as f64) / (rss / (n0 - l) as f64)
    } else if ess > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(FirstStageFit { pi_cc, residuals_cc, f_statistic, n0, l })
}

/// `x'P_Z x` and `x'P_Z y` through the QR coordinates of `x` and `y`.
pub(crate) fn projected_moments(proj: &Projection, y: &DVector<f64>, x: &DVector<f64>) -> Result<(f64, f64)> {
    let qx = proj.coords(x);
    let xpx = qx.norm_squared();
    // Relevance test on the cosine between x and its projection.
    if !(xpx > RANK_TOLERANCE * RANK_TOLERANCE * x.norm_squared()) || xpx == 0.0 {
        return Err(Error::IrrelevantInstruments);
    }
    let xpy = qx.dot(&proj.coords(y));
    Ok((xpx, xpy))
}

pub(crate) fn tsls_with(proj: &Projection, y: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    let (xpx, xpy) = projected_moments(proj, y, x)?;
    Ok(xpy / xpx)
}

/// Two-stage least squares, `(x'P_Z x)^{-1} x'P_Z y`.
pub fn tsls(y: &DVector<f64>, x: &DVector<f64>, z: &DMatrix<f64>) -> Result<f64> {
    let n = z.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch { what: "outcome", expected: n, found: y.len() });
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch { what: "endogenous regressor", expected: n, found: x.len() });
    }
    tsls_with(&Projection::new(z)?, y, x)
}

/// 2SLS on the complete cases only.
pub fn tsls_complete_case(s: &SplitDataset) -> Result<f64> {
    tsls(s.y0(), s.x0(), s.z0())
}

/// 2SLS with a regression-imputed endogenous regressor, together with its
/// imputation-aware and conventional variances.
#[derive(Debug, Clone, PartialEq)]
pub struct RIEstimate {
    pub beta_hat: f64,
    /// Imputation-aware sandwich variance (finite-sample scale, not `n`-scaled).
    pub variance_robust_ri: f64,
    /// Variance a standard 2SLS routine would report on the imputed data.
    pub variance_conventional: f64,
    pub se_robust_ri: f64,
    pub se_conventional: f64,
    pub n: usize,
    pub n0: usize,
    pub n1: usize,
    pub p_hat: f64,
    /// `y − x̃ β̂_RI`.
    pub residuals_u_tilde: DVector<f64>,
    /// `x̃ − Z π̂_CC`; zero on imputed rows.
    pub residuals_v_tilde: DVector<f64>,
    pub first_stage: FirstStageFit,
    pub warnings: Vec<String>,
}

pub fn tsls_ri(d: &IVDataset) -> Result<RIEstimate> {
    let s = model::split(d)?;
    let fit = first_stage(&s)?;
    let imp = model::impute_with(&s, fit.pi_cc.clone());
    let proj = Projection::new(imp.z())?;
    estimate_imputed(&proj, &imp, fit)
}

fn estimate_imputed(proj: &Projection, imp: &ImputedDataset, fit: FirstStageFit) -> Result<RIEstimate> {
    let beta_hat = tsls_with(proj, imp.y(), imp.x_tilde())?;
    let robust = variance::robust_with(proj, imp, beta_hat)?;
    let variance_conventional = variance::conventional_with(proj, imp, beta_hat)?;
    let mut warnings = Vec::new();
    if let Some(w) = robust.warning() {
        warnings.push(w);
    }
    Ok(RIEstimate {
        beta_hat,
        variance_robust_ri: robust.value,
        variance_conventional,
        se_robust_ri: robust.value.sqrt(),
        se_conventional: variance_conventional.sqrt(),
        n: imp.n(),
        n0: imp.n0(),
        n1: imp.n1(),
        p_hat: imp.p_hat(),
        residuals_u_tilde: imp.structural_residuals(beta_hat),
        residuals_v_tilde: imp.first_stage_residuals(),
        first_stage: fit,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn first_stage_exact_fit() {
        let z = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let d = IVDataset::complete(vec![0.0, 0.0], vec![1.0, 2.0], z).unwrap();
        let fit = first_stage(&model::split(&d).unwrap()).unwrap();
        assert!((fit.pi_cc[0] - 1.0).abs() < 1e-15);
        assert!(fit.residuals_cc.amax() < 1e-15);
        assert!(fit.f_statistic >= 0.0);
    }

    #[test]
    fn first_stage_orthogonal_regressor_has_zero_f() {
        let z = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let d = IVDataset::complete(vec![0.0; 4], vec![1.0, 1.0, 2.0, 2.0], z).unwrap();
        let fit = first_stage(&model::split(&d).unwrap()).unwrap();
        assert!(fit.pi_cc[0].abs() < 1e-15);
        assert!(fit.f_statistic < 1e-25);
    }

    #[test]
    fn first_stage_needs_more_rows_than_instruments() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let d = IVDataset::complete(vec![0.0; 2], vec![1.0, 2.0], z).unwrap();
        assert_eq!(first_stage(&model::split(&d).unwrap()).unwrap_err(), Error::TooFewCompleteCases { n0: 2, l: 2 });
    }

    #[test]
    fn first_stage_f_matches_hand_computation() {
        // z = [1,2,3,4], x = [1,3,2,5]: π̂ = 33/30, RSS = 39 − 33²/30.
        let z = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let d = IVDataset::complete(vec![0.0; 4], vec![1.0, 3.0, 2.0, 5.0], z).unwrap();
        let fit = first_stage(&model::split(&d).unwrap()).unwrap();
        let ess = 33.0f64 * 33.0 / 30.0;
        let rss = 39.0 - ess;
        let f = ess / (rss / 3.0);
        assert!((fit.f_statistic - f).abs() < 1e-12 * f);
    }

    #[test]
    fn tsls_proportional_data() {
        let z = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let b = tsls(&col(&[2.0, 4.0]), &col(&[1.0, 2.0]), &z).unwrap();
        assert!((b - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tsls_identity_case() {
        let z = DMatrix::from_row_slice(3, 1, &[1.0, 0.5, -2.0]);
        let x = col(&[0.3, 1.2, -0.7]);
        assert!((tsls(&x, &x, &z).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tsls_single_instrument_is_ratio_of_cross_products() {
        let z = DMatrix::from_row_slice(4, 1, &[1.0, -0.5, 2.0, 0.7]);
        let x = col(&[0.4, 1.1, 2.5, -0.3]);
        let y = col(&[1.0, 0.2, 3.3, 0.9]);
        let zy: f64 = z.column(0).dot(&y);
        let zx: f64 = z.column(0).dot(&x);
        assert!((tsls(&y, &x, &z).unwrap() - zy / zx).abs() < 1e-13);
    }

    #[test]
    fn tsls_rejects_irrelevant_instruments() {
        let z = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let err = tsls(&col(&[1.0, 2.0, 3.0, 4.0]), &col(&[1.0, 1.0, 2.0, 2.0]), &z).unwrap_err();
        assert_eq!(err, Error::IrrelevantInstruments);
    }

    #[test]
    fn tsls_rejects_length_mismatch() {
        let z = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(tsls(&col(&[1.0]), &col(&[1.0, 2.0]), &z).is_err());
    }
}
