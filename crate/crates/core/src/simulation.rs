//! Monte Carlo engine: data generation, MCAR deletion, replication runner and
//! per-cell aggregation.
//!
//! Random streams are ChaCha12 keyed by the experiment seed. Replication `r`
//! draws its data from stream `2r` and its deletion uniforms from stream
//! `2r + 1`, so each replication is a pure function of `(seed, r, p)` and
//! results do not depend on thread count or scheduling. The deletion
//! uniforms do not depend on `p`: a row missing at `p` is also missing at
//! every larger `p` of the same replication.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::tsls_ri;
use crate::inference::{wald_test, VarianceKind};
use crate::model::IVDataset;
use crate::variance::PopulationMoments;

/// Standard deviation of the homoskedastic error component of the DGP.
const ETA_SCALE: f64 = 0.86;

/// Monte Carlo design. Field names double as the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub beta: f64,
    /// Number of instruments `L`.
    pub instruments: usize,
    pub n: usize,
    /// Replications per grid point `R`.
    pub replications: usize,
    pub sigma_uv: f64,
    /// Heteroskedasticity strength.
    pub phi: f64,
    /// Full-sample first-stage F the instrument strength is calibrated to.
    pub f_target: f64,
    /// Missing probabilities, strictly increasing.
    pub p_grid: Vec<f64>,
    pub seed: u64,
    pub alpha: f64,
    /// Replace the heteroskedastic structural error with
    /// `u = σ_uv v + sqrt(1 − σ_uv²) η`, `η ~ N(0, 1)`.
    pub homoskedastic_override: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            instruments: 3,
            n: 1000,
            replications: 5000,
            sigma_uv: 0.3,
            phi: 5.0,
            f_target: 100.0,
            p_grid: p_grid(0.8, 0.005),
            seed: 1,
            alpha: 0.05,
            homoskedastic_override: false,
        }
    }
}

/// `0, step, 2·step, …` up to and including `max` (within rounding).
/// Points are rounded to ten decimals so that e.g. `0.15` is exactly the
/// nearest double to 0.15.
pub fn p_grid(max: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && max >= 0.0, "grid needs a positive step and nonnegative max");
    let count = (max / step + 1e-9).floor() as usize;
    (0..=count).map(|i| ((i as f64 * step) * 1e10).round() / 1e10).collect()
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidConfig { field: field.into(), reason: reason.into() }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instruments < 1 {
            return Err(invalid("instruments", "need at least one instrument"));
        }
        if self.n <= self.instruments {
            return Err(invalid("n", format!("n = {} must exceed instruments = {}", self.n, self.instruments)));
        }
        if self.replications < 1 {
            return Err(invalid("replications", "need at least one replication"));
        }
        if !(self.sigma_uv.abs() < 1.0) {
            return Err(invalid("sigma_uv", format!("|sigma_uv| must be < 1, got {}", self.sigma_uv)));
        }
        if !(self.phi >= 0.0) || !self.phi.is_finite() {
            return Err(invalid("phi", format!("must be finite and nonnegative, got {}", self.phi)));
        }
        if !(self.f_target > 0.0) || !self.f_target.is_finite() {
            return Err(invalid("f_target", format!("must be positive, got {}", self.f_target)));
        }
        if !self.beta.is_finite() {
            return Err(invalid("beta", "must be finite"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if self.p_grid.is_empty() {
            return Err(invalid("p_grid", "must not be empty"));
        }
        for (i, &p) in self.p_grid.iter().enumerate() {
            if !(0.0..1.0).contains(&p) {
                return Err(invalid(
                    format!("p_grid[{i}]"),
                    format!("missing probability must lie in [0, 1), got {p}"),
                ));
            }
            if i > 0 && p <= self.p_grid[i - 1] {
                return Err(invalid(format!("p_grid[{i}]"), "grid must be strictly increasing"));
            }
        }
        Ok(())
    }

    /// First-stage coefficients: every entry equals `sqrt(f_target · L / n)`,
    /// so the full-sample concentration parameter is `f_target · L`.
    pub fn pi(&self) -> DVector<f64> {
        let l = self.instruments;
        DVector::from_element(l, (self.f_target * l as f64 / self.n as f64).sqrt())
    }

    /// Population moments of the homoskedastic-override design at missing
    /// probability `p` (`Q_ZZ = I/L`, `σ_u² = σ_v² = 1`).
    pub fn homoskedastic_moments(&self, p: f64) -> PopulationMoments {
        let l = self.instruments;
        let q_zz = DMatrix::identity(l, l) / l as f64;
        let q_xz = &q_zz * self.pi();
        PopulationMoments::mcar(q_xz, q_zz, 1.0, 1.0, self.sigma_uv, p, self.beta)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One simulated sample with its latent errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSample {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub z: DMatrix<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl SimulatedSample {
    pub fn dataset(&self) -> IVDataset {
        IVDataset::complete(self.y.clone(), self.x.clone(), self.z.clone())
            .expect("simulated data is finite and well-shaped")
    }
}

/// Draws the fully observed sample of replication `replication`:
///
/// ```text
/// Zᵢ ~ N(0, I/L),  vᵢ ~ N(0, 1),  xᵢ = Zᵢ'π + vᵢ,  yᵢ = xᵢβ + uᵢ
/// uᵢ = σ_uv vᵢ + sqrt((1 − σ_uv²)/(φ + 0.86²)) (φ ε₁ᵢ + 0.86 ε₂ᵢ)
/// ε₁ᵢ ~ N(0, Zᵢ'Zᵢ),  ε₂ᵢ ~ N(0, 0.86²)
/// ```
///
/// The normalization constant is used as written, so `Var(u)` is not 1.
pub fn generate(config: &SimConfig, replication: u64) -> SimulatedSample {
    let (n, l) = (config.n, config.instruments);
    let pi = config.pi();
    let mut rng = rng_for(config.seed, 2 * replication);
    let zscale = 1.0 / (l as f64).sqrt();
    let hetero_scale = ((1.0 - config.sigma_uv.powi(2)) / (config.phi + ETA_SCALE * ETA_SCALE)).sqrt();
    let homo_scale = (1.0 - config.sigma_uv.powi(2)).sqrt();

    let mut z = DMatrix::zeros(n, l);
    let (mut y, mut x, mut u, mut v) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let mut zz = 0.0;
        let mut xi = 0.0;
        for j in 0..l {
            let zij = zscale * rng.sample::<f64, _>(StandardNormal);
            z[(i, j)] = zij;
            zz += zij * zij;
            xi += zij * pi[j];
        }
        let vi: f64 = rng.sample(StandardNormal);
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let ui = if config.homoskedastic_override {
            config.sigma_uv * vi + homo_scale * a
        } else {
            let eps1 = zz.sqrt() * a;
            let eps2 = ETA_SCALE * b;
            config.sigma_uv * vi + hetero_scale * (config.phi * eps1 + ETA_SCALE * eps2)
        };
        xi += vi;
        x[i] = xi;
        v[i] = vi;
        u[i] = ui;
        y[i] = xi * config.beta + ui;
    }
    SimulatedSample { y, x, z, u, v }
}

/// Bernoulli(p) deletion mask for replication `replication`.
pub fn deletion_mask(n: usize, p: f64, seed: u64, replication: u64) -> Vec<bool> {
    let mut rng = rng_for(seed, 2 * replication + 1);
    (0..n).map(|_| rng.random::<f64>() < p).collect()
}

/// Deletes each row's regressor independently with probability `p`.
pub fn mcar_delete(d: &IVDataset, p: f64, seed: u64, replication: u64) -> IVDataset {
    d.with_missing(&deletion_mask(d.n(), p, seed, replication))
}

/// Estimates from one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicationOutcome {
    pub beta_hat: f64,
    pub variance_robust: f64,
    pub variance_conventional: f64,
    pub reject_robust: bool,
    pub reject_conventional: bool,
    pub cc_f: f64,
    pub n1: usize,
}

pub fn run_replication(config: &SimConfig, p: f64, replication: u64) -> Result<ReplicationOutcome> {
    let sample = generate(config, replication);
    let data = mcar_delete(&sample.dataset(), p, config.seed, replication);
    let est = tsls_ri(&data)?;
    let robust = wald_test(est.beta_hat, est.variance_robust_ri, config.beta, config.alpha, VarianceKind::RobustRi)?;
    let conv =
        wald_test(est.beta_hat, est.variance_conventional, config.beta, config.alpha, VarianceKind::Conventional)?;
    Ok(ReplicationOutcome {
        beta_hat: est.beta_hat,
        variance_robust: est.variance_robust_ri,
        variance_conventional: est.variance_conventional,
        reject_robust: robust.reject,
        reject_conventional: conv.reject,
        cc_f: est.first_stage.f_statistic,
        n1: est.n1,
    })
}

/// All `R` replications at missing probability `p`, in replication order.
pub fn run_replications(config: &SimConfig, p: f64) -> Vec<Result<ReplicationOutcome>> {
    (0..config.replications as u64).into_par_iter().map(|r| run_replication(config, p, r)).collect()
}

/// Aggregates over the replications of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub p: f64,
    pub rmse: f64,
    pub mean_se_robust: f64,
    pub mean_se_conventional: f64,
    pub rejection_robust: f64,
    pub rejection_conventional: f64,
    pub mean_cc_f: f64,
    pub replications_used: usize,
}

/// Reduces replication outcomes in index order. Failed replications are
/// dropped; more than 1% failures is an error.
pub fn aggregate(config: &SimConfig, p: f64, outcomes: &[Result<ReplicationOutcome>]) -> Result<ExperimentRow> {
    let total = outcomes.len();
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    if failed * 100 > total || failed == total {
        let first = outcomes.iter().find_map(|o| o.as_ref().err()).map(ToString::to_string).unwrap_or_default();
        return Err(Error::TooManyFailures { failed, total, first });
    }
    let ok = outcomes.iter().filter_map(|o| o.as_ref().ok());
    let (mut sq, mut se_r, mut se_c, mut rej_r, mut rej_c, mut f) = (0.0, 0.0, 0.0, 0usize, 0usize, 0.0);
    for o in ok {
        sq += (o.beta_hat - config.beta).powi(2);
        se_r += o.variance_robust.sqrt();
        se_c += o.variance_conventional.sqrt();
        rej_r += o.reject_robust as usize;
        rej_c += o.reject_conventional as usize;
        f += o.cc_f;
    }
    let used = total - failed;
    let m = used as f64;
    Ok(ExperimentRow {
        p,
        rmse: (sq / m).sqrt(),
        mean_se_robust: se_r / m,
        mean_se_conventional: se_c / m,
        rejection_robust: rej_r as f64 / m,
        rejection_conventional: rej_c as f64 / m,
        mean_cc_f: f / m,
        replications_used: used,
    })
}

pub fn run_cell(config: &SimConfig, p: f64) -> Result<ExperimentRow> {
    config.validate()?;
    if !(0.0..1.0).contains(&p) {
        return Err(invalid("p", format!("missing probability must lie in [0, 1), got {p}")));
    }
    aggregate(config, p, &run_replications(config, p))
}

/// Runs every grid point, in grid order. Parallelism comes from the ambient
/// rayon pool and never changes the output.
pub fn run_experiment(config: &SimConfig) -> Result<Vec<ExperimentRow>> {
    config.validate()?;
    config.p_grid.iter().map(|&p| run_cell(config, p)).collect()
}
