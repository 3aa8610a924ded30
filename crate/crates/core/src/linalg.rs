//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works with tall `n × L` instrument matrices and tiny
//! `L × L` moment matrices. Least squares goes through a Householder QR;
//! normal equations are never formed for a solve.

use nalgebra::{linalg::QR, Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Smallest admissible ratio of the smallest to the largest singular value.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// QR factorization of an instrument matrix, reused for every projection
/// onto its column space.
#[derive(Debug, Clone)]
pub struct Projection {
    qr: QR<f64, Dyn, Dyn>,
    r: DMatrix<f64>,
    rows: usize,
    cols: usize,
}

impl Projection {
    /// Factorizes `z`, rejecting it when it is not of full column rank.
    pub fn new(z: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = z.shape();
        if cols == 0 || rows < cols {
            return Err(Error::RankDeficient { ratio: 0.0 });
        }
        let qr = z.clone().qr();
        let r = qr.r();
        // R shares its singular values with Z.
        let sv = r.singular_values();
        let max = sv.max();
        let min = sv.min();
        let ratio = if max > 0.0 && max.is_finite() { min / max } else { 0.0 };
        if !(ratio >= RANK_TOLERANCE) {
            return Err(Error::RankDeficient { ratio });
        }
        Ok(Self { qr, r, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Coordinates of `v` in the orthonormal basis of the column space (`Q'v`).
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.rows, "vector length must match the row count");
        let mut w = v.clone();
        self.qr.q_tr_mul(&mut w);
        w.rows(0, self.cols).into_owned()
    }

    /// Least-squares coefficients of `v` on the columns, `(Z'Z)^{-1} Z'v`.
    pub fn coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        self.solve_r(&self.coords(v))
    }

    /// Solves `R b = c`; `R` is nonsingular by construction.
    pub(crate) fn solve_r(&self, c: &DVector<f64>) -> DVector<f64> {
        self.r.solve_upper_triangular(c).expect("R is nonsingular after the rank check")
    }
}

/// Least-squares solution of `a b ≈ y` via QR.
pub fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(Projection::new(a)?.coefficients(y))
}

/// Cholesky factor of a symmetric positive definite moment matrix.
pub(crate) fn spd_factor(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what));
    }
    let chol = Cholesky::new(m.clone()).ok_or(Error::Singular(what))?;
    // Cholesky succeeds on some numerically singular matrices; check conditioning
    // through the diagonal of the factor.
    let d = chol.l_dirty().diagonal();
    let (min, max) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x.abs()), hi.max(x.abs())));
    if !(max > 0.0) || min / max < RANK_TOLERANCE {
        return Err(Error::Singular(what));
    }
    Ok(chol)
}

/// Accumulates `weight · z zᵀ` into `acc` for a single row `z`.
#[inline]
pub(crate) fn add_outer(acc: &mut DMatrix<f64>, z: &[f64], weight: f64) {
    let l = z.len();
    for j in 0..l {
        for k in j..l {
            // zⱼzₖ is evaluated identically for both triangles, so the
            // accumulated matrix stays exactly symmetric.
            let v = weight * (z[j] * z[k]);
            acc[(j, k)] += v;
            if k != j {
                acc[(k, j)] += v;
            }
        }
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
