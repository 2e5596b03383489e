//! Covariance and mean excess-return estimation over a panel window.
//!
//! Two estimators are offered: the unbiased sample covariance, and a
//! Ledoit-Wolf shrinkage towards the constant-correlation target
//!
//! ```text
//! S_shrunk = d * F + (1 - d) * S
//! F_ii = S_ii,  F_ij = rbar * sqrt(S_ii * S_jj)
//! ```
//!
//! where `rbar` is the average pairwise sample correlation. When no intensity
//! is supplied, `d` is the analytic Ledoit-Wolf estimate clamped to `[0, 1]`.

use std::io::Write;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{mean, ReturnPanel, RowRange};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Sample,
    Shrunk { intensity: f64 },
}

/// Which estimator to use, before the intensity is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    #[default]
    Sample,
    Shrunk,
}

impl std::str::FromStr for EstimatorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sample" => Ok(Self::Sample),
            "shrunk" | "shrinkage" => Ok(Self::Shrunk),
            other => Err(Error::BadInput(format!("unknown estimator `{other}` (sample|shrunk)"))),
        }
    }
}

/// Factor covariance in per-day return-variance units.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub sigma: DMatrix<f64>,
    pub estimator: Estimator,
    pub window: (NaiveDate, NaiveDate),
}

impl CovEstimate {
    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    /// The same estimate with `sigma` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            sigma: &self.sigma * factor,
            ..self.clone()
        }
    }

    /// Wraps a bare matrix, mostly for tests and sweeps.
    pub fn from_matrix(sigma: DMatrix<f64>) -> Self {
        let epoch = NaiveDate::default();
        Self {
            sigma,
            estimator: Estimator::Sample,
            window: (epoch, epoch),
        }
    }
}

/// Mean daily excess returns over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mu: DVector<f64>,
    pub rf_mean: f64,
}

impl MomentEstimate {
    pub fn from_vector(mu: DVector<f64>) -> Self {
        Self { mu, rf_mean: 0.0 }
    }
}

fn check_window(panel: &ReturnPanel, window: RowRange) -> Result<()> {
    panel.check_range(window)?;
    if window.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: window.len(),
        });
    }
    if window.len() <= panel.n_factors() {
        log::warn!(
            "covariance window of {} rows for {} factors is rank deficient",
            window.len(),
            panel.n_factors()
        );
    }
    Ok(())
}

fn demeaned(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = x.nrows() as f64;
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / t).collect();
    DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] - means[c])
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Unbiased sample covariance (divisor `T - 1`) of the factor columns.
pub fn sample_cov(panel: &ReturnPanel, window: RowRange) -> Result<CovEstimate> {
    check_window(panel, window)?;
    let sigma = sample_cov_matrix(&panel.factor_returns(window));
    Ok(CovEstimate {
        sigma,
        estimator: Estimator::Sample,
        window: panel.date_span(window),
    })
}

/// Unbiased covariance of the columns of `x` (`T x N`).
pub fn sample_cov_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let centered = demeaned(x);
    symmetrize(centered.transpose() * &centered / (x.nrows() as f64 - 1.0))
}

/// Constant-correlation target built from a covariance matrix.
pub fn constant_correlation_target(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    let sd: Vec<f64> = (0..n).map(|i| s[(i, i)].max(0.0).sqrt()).collect();
    let rbar = average_correlation(s, &sd);
    DMatrix::from_fn(n, n, |i, j| if i == j { s[(i, i)] } else { rbar * sd[i] * sd[j] })
}

fn average_correlation(s: &DMatrix<f64>, sd: &[f64]) -> f64 {
    let n = s.nrows();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if sd[i] > 0.0 && sd[j] > 0.0 {
                total += s[(i, j)] / (sd[i] * sd[j]);
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Analytic Ledoit-Wolf intensity for the constant-correlation target, clamped to `[0, 1]`.
pub fn ledoit_wolf_intensity(x: &DMatrix<f64>) -> f64 {
    let (t, n) = x.shape();
    if n < 2 || t < 2 {
        return 0.0;
    }
    let tf = t as f64;
    let y = demeaned(x);
    // The asymptotic formulas use the maximum-likelihood scaling 1/T.
    let s = y.transpose() * &y / tf;
    let sd: Vec<f64> = (0..n).map(|i| s[(i, i)].max(0.0).sqrt()).collect();
    if sd.contains(&0.0) {
        return 0.0;
    }
    let rbar = average_correlation(&s, &sd);

    let y2 = y.map(|v| v * v);
    // pi_ij = mean_t (y_ti y_tj - s_ij)^2 = mean(y_i^2 y_j^2) - s_ij^2
    let pi_mat = y2.transpose() * &y2 / tf - s.map(|v| v * v);
    let pi_hat = pi_mat.sum();

    // theta_ii,ij = mean_t (y_ti^2 - s_ii)(y_ti y_tj - s_ij) = mean(y_i^3 y_j) - s_ii s_ij
    let y3 = y.map(|v| v * v * v);
    let m3 = y3.transpose() * &y / tf;
    let mut rho_off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let theta_ii_ij = m3[(i, j)] - s[(i, i)] * s[(i, j)];
            let theta_jj_ij = m3[(j, i)] - s[(j, j)] * s[(i, j)];
            rho_off += (sd[j] / sd[i]) * theta_ii_ij + (sd[i] / sd[j]) * theta_jj_ij;
        }
    }
    let rho_hat = pi_mat.diagonal().sum() + 0.5 * rbar * rho_off;

    let target = DMatrix::from_fn(n, n, |i, j| if i == j { s[(i, i)] } else { rbar * sd[i] * sd[j] });
    let gamma_hat = (&target - &s).map(|v| v * v).sum();
    if gamma_hat <= f64::EPSILON * s.norm_squared() {
        return 0.0;
    }
    let kappa = (pi_hat - rho_hat) / gamma_hat;
    (kappa / tf).clamp(0.0, 1.0)
}

/// Shrinkage covariance `d * F + (1 - d) * S` with `S` the unbiased sample covariance.
pub fn shrunk_cov(panel: &ReturnPanel, window: RowRange, intensity: Option<f64>) -> Result<CovEstimate> {
    check_window(panel, window)?;
    let x = panel.factor_returns(window);
    let delta = match intensity {
        Some(d) if (0.0..=1.0).contains(&d) => d,
        Some(d) => {
            return Err(Error::BadInput(format!(
                "shrinkage intensity must lie in [0, 1], got {d}"
            )))
        }
        None => ledoit_wolf_intensity(&x),
    };
    let s = sample_cov_matrix(&x);
    Ok(CovEstimate {
        sigma: shrink_towards(&s, delta),
        estimator: Estimator::Shrunk { intensity: delta },
        window: panel.date_span(window),
    })
}

/// Convex blend of `s` with its constant-correlation target. The endpoints are exact.
pub fn shrink_towards(s: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    if delta == 0.0 {
        return s.clone();
    }
    let target = constant_correlation_target(s);
    if delta == 1.0 {
        return target;
    }
    let n = s.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            s[(i, i)]
        } else {
            delta * target[(i, j)] + (1.0 - delta) * s[(i, j)]
        }
    })
}

/// Dispatches to [`sample_cov`] or [`shrunk_cov`] (analytic intensity).
pub fn estimate(panel: &ReturnPanel, window: RowRange, choice: EstimatorChoice) -> Result<CovEstimate> {
    match choice {
        EstimatorChoice::Sample => sample_cov(panel, window),
        EstimatorChoice::Shrunk => shrunk_cov(panel, window, None),
    }
}

/// Mean of `r_i - r_f` for every factor over `window`.
pub fn mean_excess(panel: &ReturnPanel, window: RowRange) -> Result<MomentEstimate> {
    panel.check_range(window)?;
    if window.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let rf = panel.risk_free_returns(window);
    let rf_mean = mean(&rf);
    let mu = DVector::from_fn(panel.n_factors(), |f, _| {
        let excess: Vec<f64> = (window.start..window.end)
            .zip(&rf)
            .map(|(r, rf)| panel.factor_return(r, f) - rf)
            .collect();
        mean(&excess)
    });
    Ok(MomentEstimate { mu, rf_mean })
}

/// Writes a square matrix with `names` as header row and first column.
pub fn write_matrix_csv<W: Write>(writer: W, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    out.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend((0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<matrix csv>", e))?;
    Ok(())
}

/// Frobenius distance between two covariance estimates.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}
