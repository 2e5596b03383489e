//! Weight paths over time and sensitivity of prior/posterior weights to a
//! volatility multiplier `m` applied as `S -> m S`.

use std::io::Write;

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::allocate::WeightVector;
use crate::backtest::BacktestLedger;
use crate::blacklitterman::{bl_pipeline, RiskAversion, ViewSet};
use crate::covariance::{frobenius_distance, sample_cov, shrunk_cov, CovEstimate};
use crate::error::{Error, Result};
use crate::marketdata::{ReturnPanel, RowRange};

/// A weight above this marks a corner solution.
pub const CORNER_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPath {
    pub series: String,
    pub dates: Vec<NaiveDate>,
    pub weights: Vec<WeightVector>,
    /// Per date: the largest weight exceeds [`CORNER_THRESHOLD`].
    pub corner: Vec<bool>,
}

impl WeightPath {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Weight of `factor` at every date.
    pub fn factor_series(&self, factor: usize) -> Vec<f64> {
        self.weights.iter().map(|w| w.weights[factor]).collect()
    }
}

pub fn is_corner(weights: &DVector<f64>) -> bool {
    weights.iter().any(|w| *w > CORNER_THRESHOLD)
}

/// One path per ledger series, in series order.
pub fn weight_paths(ledger: &BacktestLedger) -> Vec<WeightPath> {
    ledger
        .series()
        .into_iter()
        .map(|series| {
            let records: Vec<_> = ledger.records_for(&series).collect();
            WeightPath {
                dates: records.iter().map(|r| r.date).collect(),
                weights: records.iter().map(|r| r.weights.clone()).collect(),
                corner: records.iter().map(|r| is_corner(&r.weights.weights)).collect(),
                series,
            }
        })
        .collect()
}

/// Rebalance dates on which any series holds a corner solution, with those series.
pub fn corner_rounds(paths: &[WeightPath]) -> Vec<(NaiveDate, Vec<String>)> {
    let mut out: Vec<(NaiveDate, Vec<String>)> = Vec::new();
    for path in paths {
        for (date, _) in path.dates.iter().zip(&path.corner).filter(|(_, c)| **c) {
            match out.iter_mut().find(|(d, _)| d == date) {
                Some((_, names)) => names.push(path.series.clone()),
                None => out.push((*date, vec![path.series.clone()])),
            }
        }
    }
    out.sort_by_key(|(d, _)| *d);
    out
}

/// 21 log-spaced multipliers from 0.25 to 4.
pub fn default_multipliers() -> Vec<f64> {
    (0..=20).map(|k| 0.25 * 16f64.powf(k as f64 / 20.0)).collect()
}

/// How view uncertainty follows the scaled covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaMode {
    /// `Omega = diag(P tau (m S) P')` at every multiplier.
    Recompute,
    /// Keep the supplied `Omega`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolSweepResult {
    pub multipliers: Vec<f64>,
    pub prior_weights: Vec<DVector<f64>>,
    pub posterior_weights: Vec<DVector<f64>>,
    pub posterior_returns: Vec<DVector<f64>>,
}

/// Recomputes the prior from `m S` with `prior_fn` and blends it with `views` at every multiplier.
pub fn volatility_sweep<F>(
    prior_fn: F,
    sigma: &CovEstimate,
    views: &ViewSet,
    lambda_prior: RiskAversion,
    lambda: RiskAversion,
    multipliers: &[f64],
    omega: OmegaMode,
) -> Result<VolSweepResult>
where
    F: Fn(&CovEstimate) -> Result<WeightVector>,
{
    if multipliers.is_empty() {
        return Err(Error::BadInput("empty multiplier grid".into()));
    }
    if multipliers.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::BadInput("multipliers must be positive".into()));
    }
    if multipliers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::BadInput("multipliers must be strictly increasing".into()));
    }
    let mut result = VolSweepResult {
        multipliers: multipliers.to_vec(),
        prior_weights: Vec::with_capacity(multipliers.len()),
        posterior_weights: Vec::with_capacity(multipliers.len()),
        posterior_returns: Vec::with_capacity(multipliers.len()),
    };
    for &m in multipliers {
        let scaled = sigma.scaled(m);
        let prior = prior_fn(&scaled)?;
        let bl = match omega {
            OmegaMode::Recompute if views.k() > 0 => bl_pipeline(
                &prior,
                &scaled,
                &views.retuned(&scaled, views.tau)?,
                lambda_prior,
                lambda,
            )?,
            _ => bl_pipeline(&prior, &scaled, views, lambda_prior, lambda)?,
        };
        result.prior_weights.push(prior.weights);
        result.posterior_weights.push(bl.posterior_weights.weights);
        result.posterior_returns.push(bl.posterior_mu);
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSide {
    Prior,
    Posterior,
}

/// `multiplier,<factor names...>` with one row per grid point.
pub fn write_sweep_csv<W: Write>(writer: W, names: &[String], result: &VolSweepResult, side: SweepSide) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["multiplier".to_string()];
    header.extend(names.iter().cloned());
    out.write_record(&header)?;
    let rows = match side {
        SweepSide::Prior => &result.prior_weights,
        SweepSide::Posterior => &result.posterior_weights,
    };
    for (m, w) in result.multipliers.iter().zip(rows) {
        if w.len() != names.len() {
            return Err(Error::BadInput("sweep width does not match factor names".into()));
        }
        let mut row = vec![format!("{m:?}")];
        row.extend(w.iter().map(|v| format!("{v:?}")));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<sweep csv>", e))?;
    Ok(())
}

/// How far the shrunk estimate moves the covariance and a derived weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorContrast {
    pub intensity: f64,
    pub frobenius_distance: f64,
    pub max_weight_difference: f64,
}

pub fn estimator_contrast<F>(panel: &ReturnPanel, window: RowRange, weights_fn: F) -> Result<EstimatorContrast>
where
    F: Fn(&CovEstimate) -> Result<WeightVector>,
{
    let sample = sample_cov(panel, window)?;
    let shrunk = shrunk_cov(panel, window, None)?;
    let intensity = match shrunk.estimator {
        crate::covariance::Estimator::Shrunk { intensity } => intensity,
        crate::covariance::Estimator::Sample => 0.0,
    };
    let diff = weights_fn(&sample)?.weights - weights_fn(&shrunk)?.weights;
    Ok(EstimatorContrast {
        intensity,
        frobenius_distance: frobenius_distance(&sample.sigma, &shrunk.sigma),
        max_weight_difference: diff.amax(),
    })
}
