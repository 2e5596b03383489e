//! Black-Litterman blending of an equilibrium prior with investor views.
//!
//! ```text
//! lambda_mkt = mu_B / (2 var_B)
//! pi         = 2 lambda S w
//! mu_BL      = [(tau S)^-1 + P' O^-1 P]^-1 [(tau S)^-1 pi + P' O^-1 Q]
//! w_BL       = S^-1 mu_BL / (2 lambda)
//! ```
//!
//! The reverse optimization always uses the market-calibrated aversion; the
//! scenario aversion only enters the final weights, so `pi` and `mu_BL` are
//! shared across scenarios.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocate::{Scheme, WeightVector};
use crate::covariance::CovEstimate;
use crate::error::{Error, Result};
use crate::linalg;
use crate::marketdata::{mean, sample_variance, FactorUniverse, ReturnPanel, RowRange};

/// Uncertainty of the prior for static runs.
pub const STATIC_TAU: f64 = 1.0;
/// One trading day of certainty, used for rolling runs.
pub const DYNAMIC_TAU: f64 = 1.0 / 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AversionSource {
    Empirical,
    NearKelly,
    Average,
    Averse,
    Custom,
}

impl fmt::Display for AversionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AversionSource::Empirical => "empirical",
            AversionSource::NearKelly => "kelly",
            AversionSource::Average => "average",
            AversionSource::Averse => "averse",
            AversionSource::Custom => "custom",
        })
    }
}

/// A positive risk-aversion coefficient, in the `w'mu - lambda w'S w` convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskAversion {
    pub lambda: f64,
    pub source: AversionSource,
}

impl RiskAversion {
    pub fn new(lambda: f64, source: AversionSource) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::NonPositiveAversion(lambda));
        }
        Ok(Self { lambda, source })
    }

    pub fn custom(lambda: f64) -> Result<Self> {
        Self::new(lambda, AversionSource::Custom)
    }
}

/// Command-line/config spelling of a risk-aversion choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AversionChoice {
    Scenario(AversionSource),
    Value(f64),
}

impl FromStr for AversionChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kelly" | "near_kelly" | "near-kelly" => Ok(Self::Scenario(AversionSource::NearKelly)),
            "average" | "market" => Ok(Self::Scenario(AversionSource::Average)),
            "averse" | "risk_averse" => Ok(Self::Scenario(AversionSource::Averse)),
            "empirical" => Ok(Self::Scenario(AversionSource::Empirical)),
            other => other
                .parse::<f64>()
                .map(Self::Value)
                .map_err(|_| Error::BadInput(format!("unknown lambda `{s}` (kelly|average|averse|empirical|FLOAT)"))),
        }
    }
}

/// Market-implied aversion `mu_B / (2 var_B)` from the benchmark over `window`.
///
/// `mu_B` is the mean daily benchmark excess return and `var_B` the sample
/// variance of daily benchmark returns.
pub fn market_risk_aversion(panel: &ReturnPanel, window: RowRange) -> Result<RiskAversion> {
    panel.check_range(window)?;
    if window.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: window.len(),
        });
    }
    let bench = panel.benchmark_returns(window);
    let rf = panel.risk_free_returns(window);
    let excess: Vec<f64> = bench.iter().zip(&rf).map(|(b, f)| b - f).collect();
    let variance = sample_variance(&bench);
    if !(variance > 0.0) {
        return Err(Error::DegenerateSeries("benchmark has zero variance".into()));
    }
    let lambda = aversion_from_moments(mean(&excess), variance);
    log::info!("market risk aversion {lambda:.6} (halved: {:.6})", lambda / 2.0);
    RiskAversion::new(lambda, AversionSource::Empirical)
}

pub fn aversion_from_moments(excess_mean: f64, variance: f64) -> f64 {
    excess_mean / (2.0 * variance)
}

/// Fixed scenario values; `Empirical` needs a panel window to calibrate on.
pub fn scenario_aversion(kind: AversionSource, market: Option<(&ReturnPanel, RowRange)>) -> Result<RiskAversion> {
    match kind {
        AversionSource::NearKelly => RiskAversion::new(0.01 / 2.0, kind),
        AversionSource::Average => RiskAversion::new(2.24 / 2.0, kind),
        AversionSource::Averse => RiskAversion::new(6.0 / 2.0, kind),
        AversionSource::Empirical => {
            let (panel, window) =
                market.ok_or_else(|| Error::MissingInput("empirical aversion needs a return panel".into()))?;
            market_risk_aversion(panel, window)
        }
        AversionSource::Custom => Err(Error::BadInput("custom aversion needs an explicit value".into())),
    }
}

pub fn resolve_aversion(choice: AversionChoice, market: Option<(&ReturnPanel, RowRange)>) -> Result<RiskAversion> {
    match choice {
        AversionChoice::Scenario(kind) => scenario_aversion(kind, market),
        AversionChoice::Value(v) => RiskAversion::custom(v),
    }
}

/// Reverse optimization: `pi = 2 lambda S w`.
pub fn equilibrium_prior(weights: &WeightVector, sigma: &CovEstimate, lambda: RiskAversion) -> Result<DVector<f64>> {
    if weights.len() != sigma.n() {
        return Err(Error::BadInput(format!(
            "{} weights for a {}-factor covariance",
            weights.len(),
            sigma.n()
        )));
    }
    Ok(&sigma.sigma * &weights.weights * (2.0 * lambda.lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Absolute,
    Relative,
    Global,
}

/// One leg entry: a bare factor name (weight split evenly across the leg) or an explicit weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LegEntry {
    Name(String),
    Weighted { factor: String, weight: f64 },
}

impl LegEntry {
    fn factor(&self) -> &str {
        match self {
            LegEntry::Name(n) => n,
            LegEntry::Weighted { factor, .. } => factor,
        }
    }
}

/// A single view as written in a view file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    #[serde(rename = "type")]
    pub kind: ViewKind,
    #[serde(default)]
    pub longs: Vec<LegEntry>,
    #[serde(default)]
    pub shorts: Vec<LegEntry>,
    pub q: f64,
    /// Fixed view variance; the proportional default is used when absent.
    #[serde(default)]
    pub omega: Option<f64>,
}

impl ViewSpec {
    pub fn absolute(factor: &str, q: f64) -> Self {
        Self {
            kind: ViewKind::Absolute,
            longs: vec![LegEntry::Name(factor.into())],
            shorts: Vec::new(),
            q,
            omega: None,
        }
    }

    pub fn relative(longs: &[&str], shorts: &[&str], q: f64) -> Self {
        Self {
            kind: ViewKind::Relative,
            longs: longs.iter().map(|s| LegEntry::Name((*s).into())).collect(),
            shorts: shorts.iter().map(|s| LegEntry::Name((*s).into())).collect(),
            q,
            omega: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewFile {
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub view: Vec<ViewSpec>,
}

impl ViewFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// The three example views: an absolute view on `us_momentum`, `us_growth` over
/// `us_value`, and the printed third row (1/5 on each China equity factor plus 1
/// on `us_bond_longterm`).
pub fn printed_example_views() -> Vec<ViewSpec> {
    let fifth = |f: &str| LegEntry::Weighted {
        factor: f.into(),
        weight: 0.2,
    };
    vec![
        ViewSpec::absolute("us_momentum", 0.01),
        ViewSpec::relative(&["us_growth"], &["us_value"], 0.01),
        ViewSpec {
            kind: ViewKind::Global,
            longs: vec![
                fifth("china_benchmark"),
                fifth("china_growth"),
                fifth("china_value"),
                fifth("china_tech"),
                fifth("china_quality"),
                LegEntry::Weighted {
                    factor: "us_bond_longterm".into(),
                    weight: 1.0,
                },
            ],
            shorts: Vec::new(),
            q: 0.02,
            omega: None,
        },
    ]
}

/// Black-Litterman belief bundle: `K` views on `N` factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub tau: f64,
    pub kinds: Vec<ViewKind>,
}

impl ViewSet {
    /// `K = 0`: no views.
    pub fn empty(n: usize, tau: f64) -> Self {
        Self {
            p: DMatrix::zeros(0, n),
            q: DVector::zeros(0),
            omega: DMatrix::zeros(0, 0),
            tau,
            kinds: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.p.nrows()
    }

    pub fn n(&self) -> usize {
        self.p.ncols()
    }

    /// A single absolute view selecting `factor`, with the proportional default uncertainty.
    pub fn one_hot(factor: usize, q: f64, sigma: &CovEstimate, tau: f64) -> Result<Self> {
        let n = sigma.n();
        if factor >= n {
            return Err(Error::UniverseMismatch(format!(
                "factor index {factor} outside {n} factors"
            )));
        }
        let mut p = DMatrix::zeros(1, n);
        p[(0, factor)] = 1.0;
        let mut set = Self {
            p,
            q: DVector::from_element(1, q),
            omega: DMatrix::zeros(1, 1),
            tau,
            kinds: vec![ViewKind::Absolute],
        };
        set.omega = default_omega(&set, sigma);
        set.validate()?;
        Ok(set)
    }

    /// Same views with `tau` replaced and the default uncertainty recomputed against `sigma`.
    pub fn retuned(&self, sigma: &CovEstimate, tau: f64) -> Result<Self> {
        let mut set = Self { tau, ..self.clone() };
        set.omega = default_omega(&set, sigma);
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if !(self.tau > 0.0) {
            return Err(Error::BadInput(format!("tau must be positive, got {}", self.tau)));
        }
        if self.q.len() != k || self.omega.shape() != (k, k) || self.kinds.len() != k {
            return Err(Error::BadInput("view matrices have inconsistent shapes".into()));
        }
        for (i, kind) in self.kinds.iter().enumerate() {
            let row_sum: f64 = self.p.row(i).sum();
            match kind {
                ViewKind::Relative if row_sum.abs() > 1e-12 => {
                    return Err(Error::BadInput(format!(
                        "relative view {i} must sum to 0, sums to {row_sum}"
                    )));
                }
                ViewKind::Absolute if (row_sum - 1.0).abs() > 1e-12 => {
                    return Err(Error::BadInput(format!(
                        "absolute view {i} must sum to 1, sums to {row_sum}"
                    )));
                }
                _ => {}
            }
        }
        for i in 0..k {
            for j in 0..k {
                let v = self.omega[(i, j)];
                if i == j && !(v > 0.0) {
                    return Err(Error::BadInput(format!("view {i} has non-positive uncertainty {v}")));
                }
                if i != j && v != 0.0 {
                    return Err(Error::BadInput("view uncertainty must be diagonal".into()));
                }
            }
        }
        Ok(())
    }
}

fn leg_weights(leg: &[LegEntry], sign: f64) -> Vec<(&str, f64)> {
    let even = 1.0 / leg.len().max(1) as f64;
    leg.iter()
        .map(|e| match e {
            LegEntry::Name(n) => (n.as_str(), sign * even),
            LegEntry::Weighted { factor, weight } => (factor.as_str(), sign * weight),
        })
        .collect()
}

/// Encodes view specs into `P`, `Q` and the default (or overridden) diagonal `Omega`.
pub fn build_views(specs: &[ViewSpec], universe: &FactorUniverse, sigma: &CovEstimate, tau: f64) -> Result<ViewSet> {
    let n = universe.n_factors();
    if sigma.n() != n {
        return Err(Error::BadInput("covariance does not match the universe".into()));
    }
    let k = specs.len();
    let mut set = ViewSet {
        p: DMatrix::zeros(k, n),
        q: DVector::zeros(k),
        omega: DMatrix::zeros(k, k),
        tau,
        kinds: specs.iter().map(|s| s.kind).collect(),
    };
    for (row, spec) in specs.iter().enumerate() {
        match spec.kind {
            ViewKind::Absolute => {
                if spec.longs.len() != 1 || !spec.shorts.is_empty() {
                    return Err(Error::BadInput(format!(
                        "absolute view {row} must name exactly one factor"
                    )));
                }
            }
            ViewKind::Relative => {
                if spec.longs.is_empty() || spec.shorts.is_empty() {
                    return Err(Error::BadInput(format!(
                        "relative view {row} needs long and short legs"
                    )));
                }
            }
            ViewKind::Global => {
                if spec.longs.is_empty() && spec.shorts.is_empty() {
                    return Err(Error::BadInput(format!("global view {row} names no factors")));
                }
            }
        }
        let entries = if spec.kind == ViewKind::Absolute {
            vec![(spec.longs[0].factor(), 1.0)]
        } else {
            let mut e = leg_weights(&spec.longs, 1.0);
            e.extend(leg_weights(&spec.shorts, -1.0));
            e
        };
        for (name, weight) in entries {
            let col = universe
                .factor_index(name)
                .ok_or_else(|| Error::UniverseMismatch(format!("view {row} references unknown factor `{name}`")))?;
            set.p[(row, col)] += weight;
        }
        set.q[row] = spec.q;
    }
    let defaults = default_omega(&set, sigma);
    for (row, spec) in specs.iter().enumerate() {
        set.omega[(row, row)] = spec.omega.unwrap_or(defaults[(row, row)]);
    }
    set.validate()?;
    Ok(set)
}

/// `diag(P (tau S) P')`.
pub fn default_omega(views: &ViewSet, sigma: &CovEstimate) -> DMatrix<f64> {
    let full = &views.p * (&sigma.sigma * views.tau) * views.p.transpose();
    DMatrix::from_diagonal(&full.diagonal())
}

/// Posterior expected excess returns by the precision-weighted formula.
pub fn posterior_returns(prior: &DVector<f64>, sigma: &CovEstimate, views: &ViewSet) -> Result<DVector<f64>> {
    let n = sigma.n();
    if prior.len() != n || views.n() != n {
        return Err(Error::BadInput("prior, covariance and views disagree on N".into()));
    }
    if !(views.tau > 0.0) {
        return Err(Error::BadInput(format!("tau must be positive, got {}", views.tau)));
    }
    if views.k() == 0 {
        return Ok(prior.clone());
    }
    let prior_precision = linalg::spd_inverse(&(&sigma.sigma * views.tau))?;
    let omega_inv = views
        .omega
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::BadInput("view uncertainty matrix is singular".into()))?;
    let pt_omega_inv = views.p.transpose() * omega_inv;
    let precision = &prior_precision + &pt_omega_inv * &views.p;
    let rhs = &prior_precision * prior + &pt_omega_inv * &views.q;
    let precision = (&precision + precision.transpose()) * 0.5;
    match precision.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => precision.lu().solve(&rhs).ok_or(Error::SingularCovariance {
            condition: f64::INFINITY,
        }),
    }
}

/// Unconstrained weights `S^-1 mu / (2 lambda)`: the inverse of [`equilibrium_prior`].
pub fn posterior_weights(mu_bl: &DVector<f64>, sigma: &CovEstimate, lambda: RiskAversion) -> Result<WeightVector> {
    let solved = linalg::spd_solve_vec(&sigma.sigma, mu_bl)?;
    Ok(WeightVector::new(
        solved / (2.0 * lambda.lambda),
        Scheme::BlackLitterman { lambda: lambda.lambda },
        false,
    ))
}

/// Full static run: prior returns, posterior returns and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BlResult {
    pub prior_pi: DVector<f64>,
    pub posterior_mu: DVector<f64>,
    pub posterior_weights: WeightVector,
    pub prior_weights: WeightVector,
    /// Aversion used for reverse optimization.
    pub lambda_prior: RiskAversion,
    /// Aversion used for the posterior weights.
    pub lambda_used: RiskAversion,
}

impl BlResult {
    /// `w_BL - w_prior`.
    pub fn active_weights(&self) -> DVector<f64> {
        &self.posterior_weights.weights - &self.prior_weights.weights
    }

    /// `mu_BL - pi`.
    pub fn return_difference(&self) -> DVector<f64> {
        &self.posterior_mu - &self.prior_pi
    }
}

pub fn bl_pipeline(
    prior_weights: &WeightVector,
    sigma: &CovEstimate,
    views: &ViewSet,
    lambda_prior: RiskAversion,
    lambda_used: RiskAversion,
) -> Result<BlResult> {
    let prior_pi = equilibrium_prior(prior_weights, sigma, lambda_prior)?;
    let posterior_mu = posterior_returns(&prior_pi, sigma, views)?;
    let posterior_weights = posterior_weights(&posterior_mu, sigma, lambda_used)?;
    Ok(BlResult {
        prior_pi,
        posterior_mu,
        posterior_weights,
        prior_weights: prior_weights.clone(),
        lambda_prior,
        lambda_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocate::equal_weights;

    fn sample_sigma() -> CovEstimate {
        CovEstimate::from_matrix(DMatrix::from_row_slice(
            3,
            3,
            &[0.04, 0.006, 0.002, 0.006, 0.09, 0.01, 0.002, 0.01, 0.0625],
        ))
    }

    fn three_factor_universe() -> FactorUniverse {
        let mut entries = FactorUniverse::default_universe().entries()[..4].to_vec();
        entries.push(FactorUniverse::default_universe().entries()[21].clone());
        entries[4].id = 4;
        FactorUniverse::new(entries).unwrap()
    }

    #[test]
    fn scenario_values() {
        assert_eq!(
            scenario_aversion(AversionSource::NearKelly, None).unwrap().lambda,
            0.005
        );
        assert_eq!(scenario_aversion(AversionSource::Average, None).unwrap().lambda, 1.12);
        assert_eq!(scenario_aversion(AversionSource::Averse, None).unwrap().lambda, 3.0);
        assert!(matches!(
            scenario_aversion(AversionSource::Empirical, None),
            Err(Error::MissingInput(_))
        ));
    }

    #[test]
    fn aversion_from_summary_moments() {
        let lambda = aversion_from_moments(0.000762, 0.012185 * 0.012185);
        assert!((lambda - 2.566).abs() < 5e-4, "{lambda}");
        let halved = aversion_from_moments(0.000762, 2.0 * 0.012185 * 0.012185);
        assert!((halved - lambda / 2.0).abs() < 1e-15);
        assert!(matches!(
            RiskAversion::new(0.0, AversionSource::Empirical),
            Err(Error::NonPositiveAversion(_))
        ));
    }

    #[test]
    fn choice_parsing() {
        assert_eq!(
            "kelly".parse::<AversionChoice>().unwrap(),
            AversionChoice::Scenario(AversionSource::NearKelly)
        );
        assert_eq!("2.5".parse::<AversionChoice>().unwrap(), AversionChoice::Value(2.5));
        assert!("bold".parse::<AversionChoice>().is_err());
    }

    #[test]
    fn prior_arithmetic() {
        let sigma = CovEstimate::from_matrix(DMatrix::identity(4, 4));
        let w = equal_weights(4).unwrap();
        let pi = equilibrium_prior(&w, &sigma, RiskAversion::custom(0.5).unwrap()).unwrap();
        assert!(pi.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let zero = WeightVector::new(DVector::zeros(4), Scheme::Equal, false);
        assert_eq!(
            equilibrium_prior(&zero, &sigma, RiskAversion::custom(3.0).unwrap()).unwrap(),
            DVector::zeros(4)
        );
    }

    #[test]
    fn absolute_view_row_and_default_omega() {
        let u = FactorUniverse::default_universe();
        let sigma = CovEstimate::from_matrix(DMatrix::from_diagonal(&DVector::from_fn(20, |i, _| {
            0.01 * (i + 1) as f64
        })));
        let views = build_views(&[ViewSpec::absolute("us_momentum", 0.01)], &u, &sigma, 0.5).unwrap();
        assert_eq!(views.p[(0, 6)], 1.0);
        assert_eq!(views.p.row(0).sum(), 1.0);
        assert!((views.omega[(0, 0)] - 0.5 * 0.07).abs() < 1e-15);
        let doubled = views.retuned(&sigma, 1.0).unwrap();
        assert!((doubled.omega[(0, 0)] - 2.0 * views.omega[(0, 0)]).abs() < 1e-15);
    }

    #[test]
    fn unknown_factor_and_empty_specs() {
        let u = FactorUniverse::default_universe();
        let sigma = CovEstimate::from_matrix(DMatrix::identity(20, 20));
        let err = build_views(&[ViewSpec::absolute("moon", 0.01)], &u, &sigma, 1.0).unwrap_err();
        assert!(matches!(err, Error::UniverseMismatch(_)));
        let empty = build_views(&[], &u, &sigma, 1.0).unwrap();
        assert_eq!(empty.k(), 0);
    }

    #[test]
    fn unbalanced_relative_view_is_rejected() {
        let u = FactorUniverse::default_universe();
        let sigma = CovEstimate::from_matrix(DMatrix::identity(20, 20));
        let spec = ViewSpec {
            kind: ViewKind::Relative,
            longs: vec![LegEntry::Weighted {
                factor: "us_growth".into(),
                weight: 1.0,
            }],
            shorts: vec![LegEntry::Weighted {
                factor: "us_value".into(),
                weight: 0.5,
            }],
            q: 0.01,
            omega: None,
        };
        assert!(matches!(build_views(&[spec], &u, &sigma, 1.0), Err(Error::BadInput(_))));
    }

    #[test]
    fn view_file_parses_weighted_and_bare_legs() {
        let text = r#"
            tau = 0.5
            [[view]]
            type = "relative"
            longs = ["us_growth"]
            shorts = ["us_value", "us_small"]
            q = 0.01
            [[view]]
            type = "global"
            longs = [{ factor = "us_tech", weight = 0.4 }]
            q = 0.02
            omega = 0.001
        "#;
        let file = ViewFile::from_toml_str(text).unwrap();
        assert_eq!(file.tau, Some(0.5));
        let u = FactorUniverse::default_universe();
        let sigma = CovEstimate::from_matrix(DMatrix::identity(20, 20));
        let views = build_views(&file.view, &u, &sigma, 0.5).unwrap();
        assert_eq!(views.p[(0, 1)], -0.5);
        assert_eq!(views.p[(0, 5)], -0.5);
        assert_eq!(views.p[(1, 4)], 0.4);
        assert_eq!(views.omega[(1, 1)], 0.001);
    }

    #[test]
    fn no_views_returns_prior_exactly() {
        let sigma = sample_sigma();
        let prior = DVector::from_vec(vec![0.01, 0.02, -0.003]);
        let mu = posterior_returns(&prior, &sigma, &ViewSet::empty(3, 0.3)).unwrap();
        assert_eq!(mu, prior);
    }

    #[test]
    fn confidence_limits() {
        let sigma = sample_sigma();
        let prior = DVector::from_vec(vec![0.01, 0.02, -0.003]);
        let mut views = ViewSet {
            p: DMatrix::identity(3, 3),
            q: DVector::from_vec(vec![0.05, -0.01, 0.0]),
            omega: DMatrix::zeros(3, 3),
            tau: 0.5,
            kinds: vec![ViewKind::Absolute; 3],
        };
        views.omega = DMatrix::identity(3, 3) * 1e-12;
        let sure = posterior_returns(&prior, &sigma, &views).unwrap();
        assert!((&sure - &views.q).amax() < 1e-6);
        views.omega = default_omega(&views, &sigma) * 1e12;
        let unsure = posterior_returns(&prior, &sigma, &views).unwrap();
        assert!((&unsure - &prior).amax() < 1e-6);
    }

    #[test]
    fn posterior_weights_invert_prior() {
        let sigma = sample_sigma();
        let lambda = RiskAversion::custom(1.7).unwrap();
        let w = WeightVector::new(DVector::from_vec(vec![0.5, 0.2, 0.3]), Scheme::MarketCap, true);
        let pi = equilibrium_prior(&w, &sigma, lambda).unwrap();
        let back = posterior_weights(&pi, &sigma, lambda).unwrap();
        assert!((back.weights - &w.weights).amax() < 1e-12);
        let halved = posterior_weights(&pi, &sigma, RiskAversion::custom(0.85).unwrap()).unwrap();
        assert!((halved.weights - &w.weights * 2.0).amax() < 1e-12);
    }

    #[test]
    fn pipeline_without_views_has_zero_active_weights() {
        let u = three_factor_universe();
        let sigma = sample_sigma();
        let lambda = RiskAversion::new(1.283, AversionSource::Empirical).unwrap();
        let w = equal_weights(u.n_factors()).unwrap();
        let result = bl_pipeline(&w, &sigma, &ViewSet::empty(3, 1.0), lambda, lambda).unwrap();
        assert!(result.active_weights().amax() < 1e-12);
        assert_eq!(result.return_difference(), DVector::zeros(3));
    }
}
