//! CSV ingestion.
//!
//! A header row is required. In any numeric column an empty field or the
//! exact token `NA` is a missing value; every other unparsable token is an
//! error that names the file line. Whether a missing value is allowed is
//! decided later by dataset validation.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ivimpute::{Error, IVDataset, RawDataset};

use crate::error::{CliError, CliResult};

/// Column roles, by header name.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub outcome: String,
    pub endogenous: String,
    pub instruments: Vec<String>,
}

/// A validated dataset plus the file line of each data row.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: IVDataset,
    pub lines: Vec<u64>,
}

pub fn load(path: &Path, spec: &ColumnSpec) -> CliResult<LoadedData> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read(file, spec).map_err(|e| match e {
        CliError::Io(msg) => CliError::Io(format!("{}: {msg}", path.display())),
        CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read<R: Read>(reader: R, spec: &ColumnSpec) -> CliResult<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let idx = resolve_columns(&headers, spec)?;

    let mut raw = RawDataset::default();
    let mut lines = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => return Err(csv_error(e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let cell = |k: usize| parse_cell(record.get(k).unwrap_or(""), &headers[k], line);
        raw.y.push(cell(idx.outcome)?);
        raw.x.push(cell(idx.endogenous)?);
        raw.z.push(idx.instruments.iter().map(|&k| cell(k)).collect::<CliResult<_>>()?);
        lines.push(line);
    }
    let dataset = ivimpute::validate(raw).map_err(|e| with_line(e, &lines))?;
    Ok(LoadedData { dataset, lines })
}

struct ColumnIndex {
    outcome: usize,
    endogenous: usize,
    instruments: Vec<usize>,
}

fn resolve_columns(headers: &csv::StringRecord, spec: &ColumnSpec) -> CliResult<ColumnIndex> {
    if spec.instruments.is_empty() {
        return Err(CliError::Validation("at least one instrument column is required".into()));
    }
    let find = |name: &str| -> CliResult<usize> {
        let mut hits = headers.iter().enumerate().filter(|(_, h)| *h == name).map(|(k, _)| k);
        match (hits.next(), hits.next()) {
            (Some(k), None) => Ok(k),
            (None, _) => Err(CliError::Validation(format!("column `{name}` not found in header"))),
            (Some(_), Some(_)) => {
                Err(CliError::Validation(format!("column `{name}` appears more than once in header")))
            }
        }
    };
    let mut used: Vec<&str> = Vec::new();
    for name in std::iter::once(&spec.outcome).chain([&spec.endogenous]).chain(&spec.instruments) {
        if used.contains(&name.as_str()) {
            return Err(CliError::Validation(format!("column `{name}` is assigned more than one role")));
        }
        used.push(name);
    }
    Ok(ColumnIndex {
        outcome: find(&spec.outcome)?,
        endogenous: find(&spec.endogenous)?,
        instruments: spec.instruments.iter().map(|c| find(c)).collect::<CliResult<_>>()?,
    })
}

fn parse_cell(token: &str, column: &str, line: u64) -> CliResult<Option<f64>> {
    if token.is_empty() || token == "NA" {
        return Ok(None);
    }
    token.parse::<f64>().map(Some).map_err(|_| {
        CliError::Validation(format!("line {line}: column `{column}`: cannot parse `{token}` as a number"))
    })
}

fn csv_error(e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line());
    let msg = match line {
        Some(l) => format!("line {l}: {e}"),
        None => e.to_string(),
    };
    if matches!(e.kind(), csv::ErrorKind::Io(_)) {
        CliError::Io(msg)
    } else {
        CliError::Validation(msg)
    }
}

/// Appends the file line to row-level validation errors.
fn with_line(e: Error, lines: &[u64]) -> CliError {
    let row = match &e {
        Error::NonFinite { row, .. } | Error::MissingOutsideEndogenous { row, .. } => Some(*row),
        _ => None,
    };
    match row.and_then(|r| lines.get(r - 1)) {
        Some(line) => CliError::Validation(format!("{e} (line {line})")),
        None => e.into(),
    }
}
