use std::fmt;

use thiserror::Error;

/// Which input column a validation error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Outcome,
    Endogenous,
    /// Zero-based instrument column.
    Instrument(usize),
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Outcome => write!(f, "outcome"),
            Column::Endogenous => write!(f, "endogenous regressor"),
            Column::Instrument(j) => write!(f, "instrument {}", j + 1),
        }
    }
}

/// Errors raised by validation, estimation and simulation.
///
/// Row indices are one-based so they match what a user sees in a data file.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dataset is empty (n = {n}, L = {l})")]
    Empty { n: usize, l: usize },

    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },

    #[error("non-finite {column} at row {row}")]
    NonFinite { column: Column, row: usize },

    #[error("missingness outside endogenous column, row {row} ({column})")]
    MissingOutsideEndogenous { column: Column, row: usize },

    #[error("no complete cases: every value of the endogenous regressor is missing")]
    NoCompleteCases,

    #[error("too few complete cases: n0 = {n0} with L = {l} instruments")]
    TooFewCompleteCases { n0: usize, l: usize },

    #[error("instrument matrix is rank deficient (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("instruments have no explanatory power for the regressor (x'P_Z x is numerically zero)")]
    IrrelevantInstruments,

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("variance must be finite and nonnegative, got {0}")]
    InvalidVariance(f64),

    #[error("invalid population moments: {0}")]
    InvalidMoments(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("{failed} of {total} replications failed (limit is 1%); first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
}

impl Error {
    /// True for errors caused by malformed input rather than by a failed
    /// estimation on well-formed input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Empty { .. }
                | Error::DimensionMismatch { .. }
                | Error::NonFinite { .. }
                | Error::MissingOutsideEndogenous { .. }
                | Error::InvalidAlpha(_)
                | Error::InvalidVariance(_)
                | Error::InvalidMoments(_)
                | Error::InvalidConfig { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
