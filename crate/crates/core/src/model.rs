//! Data model: the validated dataset, its complete/incomplete split, and the
//! regression-imputed dataset.

use nalgebra::{DMatrix, DVector};

use crate::error::{Column, Error, Result};
use crate::linalg::Projection;

/// Unvalidated input as it comes off the ingestion boundary. Any cell may be
/// missing (`None`); only the endogenous column is allowed to keep missing
/// cells after [`validate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawDataset {
    pub y: Vec<Option<f64>>,
    pub x: Vec<Option<f64>>,
    /// Instrument rows, each of length `L`.
    pub z: Vec<Vec<Option<f64>>>,
}

/// A validated instrumental-variables dataset whose endogenous regressor may
/// be partially missing.
///
/// Invariants: `n ≥ 1`, `L ≥ 1`, all containers have `n` rows, every `y`,
/// `Z` and observed `x` entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct IVDataset {
    y: Vec<f64>,
    x: Vec<Option<f64>>,
    z: DMatrix<f64>,
}

impl IVDataset {
    /// Builds and validates a dataset. `z` is `n × L`.
    pub fn new(y: Vec<f64>, x: Vec<Option<f64>>, z: DMatrix<f64>) -> Result<Self> {
        let (n, l) = z.shape();
        check_shape(y.len(), x.len(), n, l)?;
        for i in 0..n {
            if !y[i].is_finite() {
                return Err(Error::NonFinite { column: Column::Outcome, row: i + 1 });
            }
            if let Some(v) = x[i] {
                if !v.is_finite() {
                    return Err(Error::NonFinite { column: Column::Endogenous, row: i + 1 });
                }
            }
            for j in 0..l {
                if !z[(i, j)].is_finite() {
                    return Err(Error::NonFinite { column: Column::Instrument(j), row: i + 1 });
                }
            }
        }
        Ok(Self { y, x, z })
    }

    /// A dataset without missing values.
    pub fn complete(y: Vec<f64>, x: Vec<f64>, z: DMatrix<f64>) -> Result<Self> {
        Self::new(y, x.into_iter().map(Some).collect(), z)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of instruments.
    pub fn l(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[Option<f64>] {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n_missing(&self) -> usize {
        self.x.iter().filter(|v| v.is_none()).count()
    }

    /// Returns a copy with `x` removed on every row where `mask` is true.
    /// Rows already missing stay missing.
    pub fn with_missing(&self, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), self.n(), "mask length must equal n");
        let x = self.x.iter().zip(mask).map(|(v, &drop)| if drop { None } else { *v }).collect();
        Self { y: self.y.clone(), x, z: self.z.clone() }
    }
}

fn check_shape(ny: usize, nx: usize, nz: usize, l: usize) -> Result<()> {
    if ny == 0 || l == 0 {
        return Err(Error::Empty { n: ny, l });
    }
    if nx != ny {
        return Err(Error::DimensionMismatch { what: "endogenous regressor", expected: ny, found: nx });
    }
    if nz != ny {
        return Err(Error::DimensionMismatch { what: "instrument matrix", expected: ny, found: nz });
    }
    Ok(())
}

/// Validates raw input, reporting the first violated invariant.
///
/// Dimension errors are reported before any cell-level error; cell errors are
/// reported in row order, outcome first, then regressor, then instruments.
pub fn validate(raw: RawDataset) -> Result<IVDataset> {
    let n = raw.y.len();
    let l = raw.z.first().map_or(0, Vec::len);
    check_shape(n, raw.x.len(), raw.z.len(), l)?;
    if let Some(bad) = raw.z.iter().find(|row| row.len() != l) {
        return Err(Error::DimensionMismatch { what: "instrument row", expected: l, found: bad.len() });
    }

    let mut y = Vec::with_capacity(n);
    let mut z = DMatrix::zeros(n, l);
    for i in 0..n {
        match raw.y[i] {
            None => return Err(Error::MissingOutsideEndogenous { column: Column::Outcome, row: i + 1 }),
            Some(v) if !v.is_finite() => return Err(Error::NonFinite { column: Column::Outcome, row: i + 1 }),
            Some(v) => y.push(v),
        }
        if matches!(raw.x[i], Some(v) if !v.is_finite()) {
            return Err(Error::NonFinite { column: Column::Endogenous, row: i + 1 });
        }
        for (j, cell) in raw.z[i].iter().enumerate() {
            match *cell {
                None => return Err(Error::MissingOutsideEndogenous { column: Column::Instrument(j), row: i + 1 }),
                Some(v) if !v.is_finite() => {
                    return Err(Error::NonFinite { column: Column::Instrument(j), row: i + 1 })
                }
                Some(v) => z[(i, j)] = v,
            }
        }
    }
    Ok(IVDataset { y, x: raw.x, z })
}

/// Rows partitioned by whether the endogenous regressor is observed.
/// Within each block rows keep their original relative order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    y0: DVector<f64>,
    x0: DVector<f64>,
    z0: DMatrix<f64>,
    y1: DVector<f64>,
    z1: DMatrix<f64>,
    /// `order[k]` is the source row of the k-th stacked row (complete rows first).
    order: Vec<usize>,
}

/// Splits a dataset into complete and incomplete rows.
pub fn split(d: &IVDataset) -> Result<SplitDataset> {
    let (complete, incomplete): (Vec<usize>, Vec<usize>) = (0..d.n()).partition(|&i| d.x[i].is_some());
    if complete.is_empty() {
        return Err(Error::NoCompleteCases);
    }
    let y0 = DVector::from_iterator(complete.len(), complete.iter().map(|&i| d.y[i]));
    let x0 = DVector::from_iterator(complete.len(), complete.iter().map(|&i| d.x[i].unwrap()));
    let y1 = DVector::from_iterator(incomplete.len(), incomplete.iter().map(|&i| d.y[i]));
    let z0 = d.z.select_rows(complete.iter());
    let z1 = d.z.select_rows(incomplete.iter());
    let mut order = complete;
    order.extend(incomplete);
    Ok(SplitDataset { y0, x0, z0, y1, z1, order })
}

impl SplitDataset {
    pub fn n(&self) -> usize {
        self.order.len()
    }

    pub fn n0(&self) -> usize {
        self.y0.len()
    }

    pub fn n1(&self) -> usize {
        self.y1.len()
    }

    pub fn l(&self) -> usize {
        self.z0.ncols()
    }

    /// Share of incomplete rows, `n1 / n`.
    pub fn p_hat(&self) -> f64 {
        self.n1() as f64 / self.n() as f64
    }

    pub fn y0(&self) -> &DVector<f64> {
        &self.y0
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn z0(&self) -> &DMatrix<f64> {
        &self.z0
    }

    pub fn y1(&self) -> &DVector<f64> {
        &self.y1
    }

    pub fn z1(&self) -> &DMatrix<f64> {
        &self.z1
    }

    /// Source row of every stacked row, complete block first.
    pub fn original_index_map(&self) -> &[usize] {
        &self.order
    }

    pub fn complete_rows(&self) -> &[usize] {
        &self.order[..self.n0()]
    }

    pub fn incomplete_rows(&self) -> &[usize] {
        &self.order[self.n0()..]
    }

    /// Reassembles the source dataset.
    pub fn merge(&self) -> IVDataset {
        let n = self.n();
        let n0 = self.n0();
        let mut y = vec![0.0; n];
        let mut x = vec![None; n];
        let mut z = DMatrix::zeros(n, self.l());
        for (k, &i) in self.order.iter().enumerate() {
            if k < n0 {
                y[i] = self.y0[k];
                x[i] = Some(self.x0[k]);
                z.set_row(i, &self.z0.row(k));
            } else {
                y[i] = self.y1[k - n0];
                z.set_row(i, &self.z1.row(k - n0));
            }
        }
        IVDataset { y, x, z }
    }

    /// Instrument matrix in source row order.
    pub(crate) fn full_z(&self) -> DMatrix<f64> {
        let n0 = self.n0();
        let mut z = DMatrix::zeros(self.n(), self.l());
        for (k, &i) in self.order.iter().enumerate() {
            if k < n0 {
                z.set_row(i, &self.z0.row(k));
            } else {
                z.set_row(i, &self.z1.row(k - n0));
            }
        }
        z
    }
}

/// Dataset with the missing regressor values filled in by their complete-case
/// first-stage predictions, in source row order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDataset {
    y: DVector<f64>,
    x_tilde: DVector<f64>,
    z: DMatrix<f64>,
    imputed: Vec<bool>,
    pi_cc: DVector<f64>,
    /// `Z · pi_cc` for every row.
    fitted: DVector<f64>,
}

/// Regression imputation: fits `x0` on `Z0` by least squares and predicts the
/// missing regressor values from `Z1`.
pub fn impute(s: &SplitDataset) -> Result<ImputedDataset> {
    if s.n0() < s.l() {
        return Err(Error::TooFewCompleteCases { n0: s.n0(), l: s.l() });
    }
    let pi_cc = Projection::new(&s.z0)?.coefficients(&s.x0);
    Ok(impute_with(s, pi_cc))
}

pub(crate) fn impute_with(s: &SplitDataset, pi_cc: DVector<f64>) -> ImputedDataset {
    let n = s.n();
    let n0 = s.n0();
    let z = s.full_z();
    let fitted = &z * &pi_cc;
    let mut y = DVector::zeros(n);
    let mut x_tilde = DVector::zeros(n);
    let mut imputed = vec![false; n];
    for (k, &i) in s.order.iter().enumerate() {
        if k < n0 {
            y[i] = s.y0[k];
            x_tilde[i] = s.x0[k];
        } else {
            y[i] = s.y1[k - n0];
            x_tilde[i] = fitted[i];
            imputed[i] = true;
        }
    }
    ImputedDataset { y, x_tilde, z, imputed, pi_cc, fitted }
}

impl ImputedDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn l(&self) -> usize {
        self.z.ncols()
    }

    pub fn n1(&self) -> usize {
        self.imputed.iter().filter(|&&b| b).count()
    }

    pub fn n0(&self) -> usize {
        self.n() - self.n1()
    }

    pub fn p_hat(&self) -> f64 {
        self.n1() as f64 / self.n() as f64
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x_tilde(&self) -> &DVector<f64> {
        &self.x_tilde
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn imputed_flag(&self) -> &[bool] {
        &self.imputed
    }

    pub fn pi_cc(&self) -> &DVector<f64> {
        &self.pi_cc
    }

    /// `x̃ − Z π̂_CC`; exactly zero on imputed rows.
    pub fn first_stage_residuals(&self) -> DVector<f64> {
        &self.x_tilde - &self.fitted
    }

    /// `y − x̃ β`.
    pub fn structural_residuals(&self, beta: f64) -> DVector<f64> {
        &self.y - &self.x_tilde * beta
    }
}
