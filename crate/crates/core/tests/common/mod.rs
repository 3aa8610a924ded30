#![allow(dead_code)]

use ivimpute::simulation::{generate, mcar_delete, SimConfig};
use ivimpute::IVDataset;
use nalgebra::{DMatrix, DVector};

/// Seeded heteroskedastic fixture with Bernoulli(p) deletion.
pub fn fixture(n: usize, l: usize, p: f64, seed: u64) -> IVDataset {
    let config = SimConfig { n, instruments: l, seed, ..SimConfig::default() };
    mcar_delete(&generate(&config, 0).dataset(), p, seed, 0)
}

pub fn y_vec(d: &IVDataset) -> DVector<f64> {
    DVector::from_column_slice(d.y())
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(f64::MIN_POSITIVE)
}

/// The six-row, two-instrument fixture shipped with the CLI tests
/// (`crates/cli/tests/fixtures/six_rows.csv`); rows 3 and 6 have `x` missing.
pub fn six_rows() -> IVDataset {
    let y = vec![1.2, 2.9, 0.4, 3.1, -0.5, 1.8];
    let x = vec![Some(0.8), Some(1.9), None, Some(2.2), Some(-0.3), None];
    let z = DMatrix::from_row_slice(6, 2, &[1.0, 0.3, 1.5, -0.4, 0.2, 0.9, 2.0, 0.1, -0.4, 0.5, 0.9, -0.2]);
    IVDataset::new(y, x, z).unwrap()
}
