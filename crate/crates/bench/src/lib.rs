//! Fixtures shared by the benchmarks.

use factorbl_core::synthetic::synthetic_panel;
use factorbl_core::{CovEstimate, FactorUniverse, MomentEstimate, ReturnPanel};
use nalgebra::DMatrix;

/// Synthetic panel over the bundled 20-factor universe.
pub fn panel(days: usize, seed: u64) -> ReturnPanel {
    synthetic_panel(&FactorUniverse::default_universe(), days, seed)
}

/// Sample covariance and mean excess returns over the last `window` rows.
pub fn moments(panel: &ReturnPanel, window: usize) -> (CovEstimate, MomentEstimate) {
    let end = panel.len();
    let range = factorbl_core::RowRange::new(end - window, end);
    let sigma = factorbl_core::covariance::sample_cov(panel, range).expect("covariance");
    let mu = factorbl_core::covariance::mean_excess(panel, range).expect("moments");
    (sigma, mu)
}

/// `n × n` SPD matrix `A A' + n I` with deterministic entries.
pub fn spd(n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.5);
    &a * a.transpose() + DMatrix::identity(n, n) * n as f64
}
