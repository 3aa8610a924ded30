//! Shared inputs for the benchmarks.

use ivimpute::simulation::{generate, mcar_delete, SimConfig};
use ivimpute::IVDataset;

/// A simulated dataset of size `n` with `l` instruments and missing share `p`.
pub fn dataset(n: usize, l: usize, p: f64) -> IVDataset {
    let config = SimConfig { n, instruments: l, seed: 2024, ..SimConfig::default() };
    mcar_delete(&generate(&config, 0).dataset(), p, config.seed, 0)
}
