//! Library side of the `ivimpute` command-line tool: CSV ingestion, report
//! formatting, simulation presets and the `check` diagnostics.

pub mod check;
pub mod error;
pub mod experiment;
pub mod input;
pub mod report;

pub use error::{CliError, CliResult};
