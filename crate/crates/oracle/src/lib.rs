//! Literal, dense reference evaluations.
//!
//! Nothing here shares code with `ivimpute-core`: the projection matrix
//! `P_Z = Z(Z'Z)⁻¹Z'` is materialized, inverses are explicit, and every sum is
//! an explicit loop over rows. Slow and numerically naive on purpose; meant
//! for small fixtures only.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("oracle: matrix must be invertible")
}

fn row(z: &DMatrix<f64>, i: usize) -> DVector<f64> {
    z.row(i).transpose()
}

fn outer(z: &DVector<f64>) -> DMatrix<f64> {
    z * z.transpose()
}

/// `Z (Z'Z)⁻¹ Z'`, `n × n`.
pub fn projection_matrix(z: &DMatrix<f64>) -> DMatrix<f64> {
    z * inv(&(z.transpose() * z)) * z.transpose()
}

/// `(x'P x)⁻¹ x'P y` with a dense `P`.
pub fn tsls(y: &DVector<f64>, x: &DVector<f64>, z: &DMatrix<f64>) -> f64 {
    let p = projection_matrix(z);
    (x.transpose() * &p * y)[0] / (x.transpose() * &p * x)[0]
}

/// Regression imputation by explicit normal equations. Returns `(x̃, π̂_CC)`.
pub fn impute(x: &[Option<f64>], z: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let l = z.ncols();
    let mut zz = DMatrix::zeros(l, l);
    let mut zx = DVector::zeros(l);
    for (i, xi) in x.iter().enumerate() {
        if let Some(xi) = xi {
            let zi = row(z, i);
            zz += outer(&zi);
            zx += zi * *xi;
        }
    }
    let pi = inv(&zz) * zx;
    let x_tilde =
        DVector::from_iterator(x.len(), x.iter().enumerate().map(|(i, xi)| xi.unwrap_or_else(|| row(z, i).dot(&pi))));
    (x_tilde, pi)
}

/// Everything the imputation-aware variance is built from, evaluated
/// literally.
#[derive(Debug, Clone)]
pub struct RiReference {
    pub x_tilde: DVector<f64>,
    pub pi_cc: DVector<f64>,
    pub beta_hat: f64,
    /// The meat exactly as displayed (not symmetrized).
    pub w: DMatrix<f64>,
    /// `Σ û̃ᵢ² Zᵢ Zᵢ'`.
    pub hc0_meat: DMatrix<f64>,
    pub variance_robust: f64,
    pub variance_conventional: f64,
}

/// Imputes, estimates and evaluates the imputation-aware variance and the
/// conventional variance term by term.
pub fn ri_reference(y: &DVector<f64>, x: &[Option<f64>], z: &DMatrix<f64>) -> RiReference {
    let (n, l) = z.shape();
    let (x_tilde, pi_cc) = impute(x, z);
    let p = projection_matrix(z);
    let xpx = (x_tilde.transpose() * &p * &x_tilde)[0];
    let beta_hat = (x_tilde.transpose() * &p * y)[0] / xpx;

    let complete: Vec<usize> = (0..n).filter(|&i| x[i].is_some()).collect();
    let incomplete: Vec<usize> = (0..n).filter(|&i| x[i].is_none()).collect();
    let u: Vec<f64> = (0..n).map(|i| y[i] - x_tilde[i] * beta_hat).collect();
    let v: Vec<f64> = (0..n).map(|i| x_tilde[i] - row(z, i).dot(&pi_cc)).collect();

    let zero = || DMatrix::<f64>::zeros(l, l);
    let mut s_uu = zero();
    for i in 0..n {
        s_uu += outer(&row(z, i)) * (u[i] * u[i]);
    }
    let (mut s0, mut s_uv0, mut s_vv0) = (zero(), zero(), zero());
    for &i in &complete {
        let zz = outer(&row(z, i));
        s0 += &zz;
        s_uv0 += &zz * (u[i] * v[i]);
        s_vv0 += &zz * (v[i] * v[i]);
    }
    let mut s1 = zero();
    for &i in &incomplete {
        s1 += outer(&row(z, i));
    }
    let s0_inv = inv(&s0);
    let mut quartic = zero();
    for &i in &incomplete {
        let zz = outer(&row(z, i));
        quartic += &zz * &s0_inv * &s_vv0 * &s0_inv * &zz;
    }
    let w = &s_uu - &s_uv0 * &s0_inv * &s1 * (2.0 * beta_hat)
        + (&s1 * &s0_inv * &s_vv0 * &s0_inv * &s1 - quartic) * (beta_hat * beta_hat);

    let zz_inv = inv(&(z.transpose() * z));
    let left = x_tilde.transpose() * z * &zz_inv;
    let right = &zz_inv * z.transpose() * &x_tilde;
    let variance_robust = (&left * &w * &right)[0] / (xpx * xpx);

    let sigma2 = u.iter().map(|e| e * e).sum::<f64>() / n as f64;
    RiReference { x_tilde, pi_cc, beta_hat, w, hc0_meat: s_uu, variance_robust, variance_conventional: sigma2 / xpx }
}

/// Textbook HC0 2SLS variance through the fitted regressor `x̂ = P_Z x`:
/// `Σ ûᵢ² x̂ᵢ² / (x̂'x̂)²`.
pub fn hc0_variance(y: &DVector<f64>, x: &DVector<f64>, z: &DMatrix<f64>) -> f64 {
    let xhat = projection_matrix(z) * x;
    let beta = xhat.dot(y) / xhat.dot(x);
    let denom = xhat.dot(&xhat);
    let meat: f64 = (0..y.len()).map(|i| (y[i] - x[i] * beta).powi(2) * xhat[i].powi(2)).sum();
    meat / (denom * denom)
}

/// Textbook non-robust 2SLS variance with a `1/n` error variance:
/// `σ̂² / (x̂'x̂)`.
pub fn homoskedastic_variance(y: &DVector<f64>, x: &DVector<f64>, z: &DMatrix<f64>) -> f64 {
    let xhat = projection_matrix(z) * x;
    let beta = xhat.dot(y) / xhat.dot(x);
    let n = y.len() as f64;
    let sigma2: f64 = (0..y.len()).map(|i| (y[i] - x[i] * beta).powi(2)).sum::<f64>() / n;
    sigma2 / xhat.dot(&xhat)
}

/// Standard normal CDF by composite Simpson quadrature of the density on
/// `[0, |z|]`.
pub fn normal_cdf(z: f64) -> f64 {
    let steps = 20_000;
    let b = z.abs();
    let h = b / steps as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = pdf(0.0) + pdf(b);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * pdf(k as f64 * h);
    }
    let half = acc * h / 3.0;
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_cdf_matches_table_values() {
        assert!((normal_cdf(1.959964) - 0.975).abs() < 1e-7);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(-1.0) - 0.158655253931457).abs() < 1e-10);
    }

    #[test]
    fn dense_tsls_on_proportional_data() {
        let z = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let y = DVector::from_vec(vec![2.0, 4.0]);
        assert!((tsls(&y, &x, &z) - 2.0).abs() < 1e-12);
    }
}
