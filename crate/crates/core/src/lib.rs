//! Two-stage least squares when the endogenous regressor is partially missing
//! and filled in by regression imputation.
//!
//! The pipeline is [`model::validate`] → [`model::split`] →
//! [`estimators::tsls_ri`], which imputes the missing regressor values from a
//! complete-case first stage, runs 2SLS on the imputed data and attaches two
//! variances: an imputation-aware heteroskedasticity-robust sandwich and the
//! conventional variance that ignores the imputation. [`simulation`] holds
//! the Monte Carlo engine used to compare the two.

// Negated float comparisons below are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod simulation;
pub mod variance;

pub use error::{Column, Error, Result};
pub use estimators::{first_stage, tsls, tsls_complete_case, tsls_ri, FirstStageFit, RIEstimate};
pub use inference::{critical_z, wald_test, TestResult, VarianceKind};
pub use model::{impute, split, validate, IVDataset, ImputedDataset, RawDataset, SplitDataset};
pub use simulation::{run_cell, run_experiment, ExperimentRow, SimConfig};
pub use variance::{
    conventional_limit, corollary1_variance, variance_conventional, variance_hc0, variance_robust_ri, w_ri,
    MomentBlocks, PopulationMoments, SandwichVariance,
};
