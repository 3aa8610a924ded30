//! Variance estimators for 2SLS after regression imputation.
//!
//! Sample side: the imputation-aware sandwich ([`variance_robust_ri`], built
//! on the meat [`w_ri`]), the conventional variance a standard routine
//! reports when the imputed values are treated as data
//! ([`variance_conventional`]), and the textbook HC0 2SLS variance.
//!
//! Population side, for homoskedastic errors and MCAR deletion: the
//! asymptotic variance ([`corollary1_variance`]) and the probability limit
//! of `n` times the conventional variance ([`conventional_limit`]).
//!
//! Empirical moments are plain sums without degrees-of-freedom corrections.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::projected_moments;
use crate::linalg::{add_outer, spd_factor, symmetrize, Projection};
use crate::model::ImputedDataset;

/// The `L × L` sums entering the imputation-aware meat.
///
/// Index sets: "full" is every row, `_0` the complete rows, `_1` the imputed
/// rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBlocks {
    /// `Σ Zᵢ Zᵢ'` over all rows.
    pub s_zz_full: DMatrix<f64>,
    pub s_zz_0: DMatrix<f64>,
    pub s_zz_1: DMatrix<f64>,
    /// `Σ û̃ᵢ² Zᵢ Zᵢ'` over all rows.
    pub s_uu: DMatrix<f64>,
    /// `Σ û̃ᵢ v̂̃ᵢ Zᵢ Zᵢ'` over complete rows.
    pub s_uv_0: DMatrix<f64>,
    /// `Σ v̂̃ᵢ² Zᵢ Zᵢ'` over complete rows.
    pub s_vv_0: DMatrix<f64>,
    /// `Σ Zᵢ Zᵢ' A Zᵢ Zᵢ'` over imputed rows, `A = S_zz_0⁻¹ S_vv_0 S_zz_0⁻¹`.
    pub s_quartic_1: DMatrix<f64>,
}

impl MomentBlocks {
    /// Accumulates the blocks from residuals `u` (structural) and `v`
    /// (first stage). `imputed[i]` marks rows in the incomplete block.
    pub fn from_residuals(z: &DMatrix<f64>, imputed: &[bool], u: &DVector<f64>, v: &DVector<f64>) -> Result<Self> {
        let (n, l) = z.shape();
        assert!(imputed.len() == n && u.len() == n && v.len() == n, "row counts must agree");
        let zeros = || DMatrix::<f64>::zeros(l, l);
        let (mut s_zz_0, mut s_zz_1, mut s_uu, mut s_uv_0, mut s_vv_0) = (zeros(), zeros(), zeros(), zeros(), zeros());
        let mut row = vec![0.0; l];
        for i in 0..n {
            for (j, r) in row.iter_mut().enumerate() {
                *r = z[(i, j)];
            }
            add_outer(&mut s_uu, &row, u[i] * u[i]);
            if imputed[i] {
                add_outer(&mut s_zz_1, &row, 1.0);
            } else {
                add_outer(&mut s_zz_0, &row, 1.0);
                add_outer(&mut s_uv_0, &row, u[i] * v[i]);
                add_outer(&mut s_vv_0, &row, v[i] * v[i]);
            }
        }
        let s_zz_full = &s_zz_0 + &s_zz_1;

        let mut s_quartic_1 = zeros();
        if imputed.iter().any(|&b| b) {
            let chol = spd_factor(&s_zz_0, "complete-case instrument moment matrix")?;
            let left = chol.solve(&s_vv_0);
            let a = symmetrize(&chol.solve(&left.transpose()));
            for i in (0..n).filter(|&i| imputed[i]) {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = z[(i, j)];
                }
                // Zᵢ Zᵢ' A Zᵢ Zᵢ' = (Zᵢ' A Zᵢ) Zᵢ Zᵢ'
                let zi = DVector::from_column_slice(&row);
                let q = zi.dot(&(&a * &zi));
                add_outer(&mut s_quartic_1, &row, q);
            }
        }

        Ok(Self { s_zz_full, s_zz_0, s_zz_1, s_uu, s_uv_0, s_vv_0, s_quartic_1 })
    }

    /// Blocks for an imputed dataset at the estimate `beta_hat`.
    pub fn compute(d: &ImputedDataset, beta_hat: f64) -> Result<Self> {
        Self::from_residuals(d.z(), d.imputed_flag(), &d.structural_residuals(beta_hat), &d.first_stage_residuals())
    }
}

/// The imputation-aware meat
///
/// ```text
/// Ŵ = S_uu − 2 S_uv0 S0⁻¹ S1 β̂ + S1 S0⁻¹ S_vv0 S0⁻¹ S1 β̂² − S_quartic1 β̂²
/// ```
///
/// returned symmetrized as `(Ŵ + Ŵ')/2`. Without imputed rows, or at
/// `β̂ = 0`, this is the HC0 meat `S_uu`.
pub fn w_ri(blocks: &MomentBlocks, beta_hat: f64) -> Result<DMatrix<f64>> {
    let chol = spd_factor(&blocks.s_zz_0, "complete-case instrument moment matrix")?;
    // G = S0⁻¹ S1; since S0 and S1 are symmetric, S1 S0⁻¹ = G'.
    let g = chol.solve(&blocks.s_zz_1);
    let cross = &blocks.s_uv_0 * &g;
    let imputation = g.transpose() * &blocks.s_vv_0 * &g;
    let w = &blocks.s_uu - cross * (2.0 * beta_hat) + (imputation - &blocks.s_quartic_1) * (beta_hat * beta_hat);
    Ok(symmetrize(&w))
}

/// A sandwich variance together with its value before the nonnegativity clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichVariance {
    pub value: f64,
    pub unclamped: f64,
}

impl SandwichVariance {
    fn clamp(raw: f64) -> Self {
        if raw < 0.0 {
            log::warn!("imputation-aware variance was negative ({raw:e}); clamped to 0");
            Self { value: 0.0, unclamped: raw }
        } else {
            Self { value: raw, unclamped: raw }
        }
    }

    pub fn is_clamped(&self) -> bool {
        self.value != self.unclamped
    }

    pub fn warning(&self) -> Option<String> {
        self.is_clamped()
            .then(|| format!("robust variance was negative ({:e}) and has been clamped to 0", self.unclamped))
    }
}

/// `γ' M γ / (x̃'P_Z x̃)²` with `γ = (Z'Z)⁻¹ Z'x̃`.
fn sandwich(proj: &Projection, x: &DVector<f64>, xpx: f64, meat: &DMatrix<f64>) -> f64 {
    let gamma = proj.coefficients(x);
    gamma.dot(&(meat * &gamma)) / (xpx * xpx)
}

pub(crate) fn robust_with(proj: &Projection, d: &ImputedDataset, beta_hat: f64) -> Result<SandwichVariance> {
    let (xpx, _) = projected_moments(proj, d.y(), d.x_tilde())?;
    let blocks = MomentBlocks::compute(d, beta_hat)?;
    let w = w_ri(&blocks, beta_hat)?;
    Ok(SandwichVariance::clamp(sandwich(proj, d.x_tilde(), xpx, &w)))
}

/// Imputation-aware, heteroskedasticity-robust variance of `β̂_RI`:
/// `(x̃'P_Z x̃)⁻¹ x̃'Z (Z'Z)⁻¹ Ŵ (Z'Z)⁻¹ Z'x̃ (x̃'P_Z x̃)⁻¹`.
///
/// Negative values (possible in tiny samples, where Ŵ can be indefinite) are
/// clamped to zero and logged.
pub fn variance_robust_ri(d: &ImputedDataset, beta_hat: f64) -> Result<SandwichVariance> {
    robust_with(&Projection::new(d.z())?, d, beta_hat)
}

pub(crate) fn conventional_with(proj: &Projection, d: &ImputedDataset, beta_hat: f64) -> Result<f64> {
    let (xpx, _) = projected_moments(proj, d.y(), d.x_tilde())?;
    let sigma2 = d.structural_residuals(beta_hat).norm_squared() / d.n() as f64;
    Ok(sigma2 / xpx)
}

/// Conventional 2SLS variance on the imputed data, `σ̂²_ũ / (x̃'P_Z x̃)` with
/// `σ̂²_ũ = (1/n) Σ (yᵢ − x̃ᵢ β̂)²`.
pub fn variance_conventional(d: &ImputedDataset, beta_hat: f64) -> Result<f64> {
    conventional_with(&Projection::new(d.z())?, d, beta_hat)
}

/// Textbook HC0 variance of a 2SLS coefficient on fully observed data.
pub fn variance_hc0(y: &DVector<f64>, x: &DVector<f64>, z: &DMatrix<f64>, beta_hat: f64) -> Result<f64> {
    let proj = Projection::new(z)?;
    let (xpx, _) = projected_moments(&proj, y, x)?;
    let u = y - x * beta_hat;
    let l = z.ncols();
    let mut meat = DMatrix::zeros(l, l);
    let mut row = vec![0.0; l];
    for i in 0..z.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = z[(i, j)];
        }
        add_outer(&mut meat, &row, u[i] * u[i]);
    }
    Ok(sandwich(&proj, x, xpx, &meat))
}

/// Population moments of the homoskedastic model.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    /// `E[Zᵢ xᵢ]`.
    pub q_xz: DVector<f64>,
    /// `E[Zᵢ Zᵢ']`.
    pub q_zz: DMatrix<f64>,
    /// `E[Zᵢ Zᵢ']` among complete rows; equal to `q_zz` under MCAR.
    pub q_zz_0: DMatrix<f64>,
    pub sigma_u2: f64,
    pub sigma_v2: f64,
    pub sigma_uv: f64,
    /// Missing probability.
    pub p: f64,
    pub beta: f64,
}

impl PopulationMoments {
    /// MCAR moments (`q_zz_0 = q_zz`).
    pub fn mcar(
        q_xz: DVector<f64>,
        q_zz: DMatrix<f64>,
        sigma_u2: f64,
        sigma_v2: f64,
        sigma_uv: f64,
        p: f64,
        beta: f64,
    ) -> Self {
        Self { q_xz, q_zz_0: q_zz.clone(), q_zz, sigma_u2, sigma_v2, sigma_uv, p, beta }
    }

    /// Scalar moments of a single-instrument model.
    pub fn scalar(q_xz: f64, q_zz: f64, sigma_u2: f64, sigma_v2: f64, sigma_uv: f64, p: f64, beta: f64) -> Self {
        Self::mcar(
            DVector::from_element(1, q_xz),
            DMatrix::from_element(1, 1, q_zz),
            sigma_u2,
            sigma_v2,
            sigma_uv,
            p,
            beta,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.q_xz.len();
        let bad = |msg: String| Err(Error::InvalidMoments(msg));
        if l == 0 || self.q_zz.shape() != (l, l) || self.q_zz_0.shape() != (l, l) {
            return bad(format!("q_zz and q_zz_0 must be {l}×{l} and q_xz nonempty"));
        }
        if !(self.p >= 0.0 && self.p < 1.0) {
            return bad(format!("p must lie in [0, 1), got {}", self.p));
        }
        if !(self.sigma_u2 > 0.0 && self.sigma_v2 > 0.0) {
            return bad("sigma_u2 and sigma_v2 must be positive".into());
        }
        if !(self.sigma_uv.abs() <= (self.sigma_u2 * self.sigma_v2).sqrt()) {
            return bad(format!("|sigma_uv| = {} exceeds sqrt(sigma_u2·sigma_v2)", self.sigma_uv.abs()));
        }
        if !self.beta.is_finite() || self.q_xz.iter().any(|v| !v.is_finite()) {
            return bad("beta and q_xz must be finite".into());
        }
        for (m, name) in [(&self.q_zz, "q_zz"), (&self.q_zz_0, "q_zz_0")] {
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return bad(format!("{name} is not symmetric"));
            }
        }
        Ok(())
    }

    /// `Q_xZ Q⁻¹ Q_Zx` for the given second-moment matrix.
    fn concentration(&self, q: &DMatrix<f64>, what: &'static str) -> Result<f64> {
        let chol = spd_factor(q, what)?;
        let a = self.q_xz.dot(&chol.solve(&self.q_xz));
        if !(a > 0.0) {
            return Err(Error::InvalidMoments("Q_Zx must be nonzero".into()));
        }
        Ok(a)
    }
}

/// Asymptotic variance of `β̂_RI` under homoskedasticity and MCAR:
/// `(σ_u² + p/(1−p) σ_v² β²) / (Q_xZ Q_ZZ⁻¹ Q_Zx)`.
pub fn corollary1_variance(m: &PopulationMoments) -> Result<f64> {
    m.validate()?;
    let a = m.concentration(&m.q_zz, "Q_ZZ")?;
    Ok((m.sigma_u2 + m.p / (1.0 - m.p) * m.sigma_v2 * m.beta * m.beta) / a)
}

/// Homoskedastic asymptotic variance before imposing MCAR, using the
/// complete-row moment matrix `q_zz_0`:
/// `σ_u²/a − σ_v²β²/a + (1/(1−p)) a₀ σ_v²β² / a²`, with `a = Q_xZ Q_ZZ⁻¹ Q_Zx`
/// and `a₀ = Q_xZ Q_Z0Z0⁻¹ Q_Zx`. Equals [`corollary1_variance`] when
/// `q_zz_0 = q_zz`.
pub fn homoskedastic_variance(m: &PopulationMoments) -> Result<f64> {
    m.validate()?;
    let a = m.concentration(&m.q_zz, "Q_ZZ")?;
    let a0 = m.concentration(&m.q_zz_0, "Q_Z0Z0")?;
    let sb = m.sigma_v2 * m.beta * m.beta;
    Ok(m.sigma_u2 / a - sb / a + a0 * sb / ((1.0 - m.p) * a * a))
}

/// Probability limit of `n` times the conventional variance under
/// homoskedasticity and MCAR:
/// `(σ_u² + p (2 σ_uv β + σ_v² β²)) / (Q_xZ Q_ZZ⁻¹ Q_Zx)`.
pub fn conventional_limit(m: &PopulationMoments) -> Result<f64> {
    m.validate()?;
    let a = m.concentration(&m.q_zz, "Q_ZZ")?;
    Ok((m.sigma_u2 + m.p * (2.0 * m.sigma_uv * m.beta + m.sigma_v2 * m.beta * m.beta)) / a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(p: f64, beta: f64, sigma_uv: f64) -> PopulationMoments {
        PopulationMoments::scalar(1.0, 1.0, 1.0, 1.0, sigma_uv, p, beta)
    }

    #[test]
    fn corollary1_scalar_substitution() {
        assert!((corollary1_variance(&unit(0.5, 0.5, 0.0)).unwrap() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn corollary1_without_missing_is_standard_variance() {
        let m = PopulationMoments::scalar(2.0, 4.0, 1.5, 1.0, 0.2, 0.0, 0.5);
        // (Q_xZ Q_ZZ⁻¹ Q_Zx)⁻¹ σ_u² = (4/4)⁻¹ · 1.5
        assert_eq!(corollary1_variance(&m).unwrap(), 1.5);
        assert_eq!(corollary1_variance(&m).unwrap(), conventional_limit(&m).unwrap());
    }

    #[test]
    fn corollary1_increases_with_p() {
        assert!(
            corollary1_variance(&unit(0.6, 0.5, 0.0)).unwrap() > corollary1_variance(&unit(0.3, 0.5, 0.0)).unwrap()
        );
    }

    #[test]
    fn conventional_limit_can_fall_below_complete_data_variance() {
        let v = conventional_limit(&unit(0.5, 0.5, -0.3)).unwrap();
        assert!((v - 0.975).abs() < 1e-15);
        assert!(v < conventional_limit(&unit(0.0, 0.5, -0.3)).unwrap());
    }

    #[test]
    fn conventional_limit_understates_without_endogeneity() {
        for p in [0.1, 0.4, 0.8] {
            assert!(conventional_limit(&unit(p, 0.5, 0.0)).unwrap() < corollary1_variance(&unit(p, 0.5, 0.0)).unwrap());
        }
    }

    #[test]
    fn general_form_reduces_under_mcar() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let m = PopulationMoments::mcar(DVector::from_vec(vec![0.3, -0.1]), q, 1.3, 0.8, 0.2, 0.35, 0.7);
        let a = corollary1_variance(&m).unwrap();
        let b = homoskedastic_variance(&m).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn invalid_moments_are_rejected() {
        assert!(matches!(corollary1_variance(&unit(1.0, 0.5, 0.0)), Err(Error::InvalidMoments(_))));
        assert!(matches!(conventional_limit(&unit(0.2, 0.5, 1.5)), Err(Error::InvalidMoments(_))));
        let singular = PopulationMoments::scalar(1.0, 0.0, 1.0, 1.0, 0.0, 0.2, 0.5);
        assert!(matches!(corollary1_variance(&singular), Err(Error::Singular(_))));
    }

    #[test]
    fn clamp_reports_negative_values() {
        let v = SandwichVariance::clamp(-1e-18);
        assert_eq!(v.value, 0.0);
        assert!(v.is_clamped() && v.warning().is_some());
        assert!(SandwichVariance::clamp(0.5).warning().is_none());
    }

    #[test]
    fn w_ri_requires_invertible_complete_block() {
        let l = 2;
        let z = DMatrix::<f64>::zeros(l, l);
        let blocks = MomentBlocks {
            s_zz_full: z.clone(),
            s_zz_0: z.clone(),
            s_zz_1: z.clone(),
            s_uu: z.clone(),
            s_uv_0: z.clone(),
            s_vv_0: z.clone(),
            s_quartic_1: z,
        };
        assert!(matches!(w_ri(&blocks, 0.5), Err(Error::Singular(_))));
    }
}
