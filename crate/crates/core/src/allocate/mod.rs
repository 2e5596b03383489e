//! Weight allocation schemes.
//!
//! Closed forms (all with the full-investment constraint `1'w = 1`):
//!
//! ```text
//! GMV         w = S^-1 1 / (1' S^-1 1)
//! max Sharpe  w = S^-1 mu / (1' S^-1 mu)
//! Markowitz   w = S^-1 (mu - v 1) / (2 lambda),  v = (1' S^-1 mu - 2 lambda) / (1' S^-1 1)
//! implied b   w = s2 S^-1 beta,                   s2 = 1 / (beta' S^-1 beta)
//! ```
//!
//! [`solve_constrained`] solves the GMV, max-Sharpe and Markowitz problems
//! again with the long-only box `0 <= w <= 1` added.

mod projection;
mod solver;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use projection::project_capped_simplex;
pub use solver::{minimize, SolverOptions, SolverReport};

use crate::covariance::{CovEstimate, MomentEstimate};
use crate::error::{Error, Result};
use crate::linalg::{self, ones};
use crate::marketdata::{mean, MarketCapWeights, ReturnPanel, RowRange};

/// Allocation scheme that produced a weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    Equal,
    MarketCap,
    ImpliedBeta,
    Gmv,
    MaxSharpe,
    Markowitz { lambda: f64 },
    BlackLitterman { lambda: f64 },
}

impl Scheme {
    /// Short machine label, e.g. `markowitz` or `gmv`.
    pub fn key(&self) -> &'static str {
        match self {
            Scheme::Equal => "equal",
            Scheme::MarketCap => "market_cap",
            Scheme::ImpliedBeta => "implied_beta",
            Scheme::Gmv => "gmv",
            Scheme::MaxSharpe => "max_sharpe",
            Scheme::Markowitz { .. } => "markowitz",
            Scheme::BlackLitterman { .. } => "black_litterman",
        }
    }

    /// Column heading used in weight tables.
    pub fn title(&self) -> String {
        match self {
            Scheme::Equal => "Equal Weights".into(),
            Scheme::MarketCap => "Market Cap Weights".into(),
            Scheme::ImpliedBeta => "Implied Beta Weights".into(),
            Scheme::Gmv => "GMV Weights".into(),
            Scheme::MaxSharpe => "Max Sharpe Weights".into(),
            Scheme::Markowitz { lambda } => format!("Markowitz Weights with lambda={lambda}"),
            Scheme::BlackLitterman { .. } => "Black-Litterman Weights".into(),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Portfolio weights with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: DVector<f64>,
    pub scheme: Scheme,
    pub constrained: bool,
}

impl WeightVector {
    pub fn new(weights: DVector<f64>, scheme: Scheme, constrained: bool) -> Self {
        Self {
            weights,
            scheme,
            constrained,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.sum()
    }

    /// True when every weight is in `[-tol, 1 + tol]` and the sum is within `tol` of one.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.weights.iter().all(|w| *w >= -tol && *w <= 1.0 + tol) && (self.sum() - 1.0).abs() <= tol
    }
}

pub fn portfolio_variance(w: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    (w.transpose() * sigma * w)[(0, 0)]
}

/// `w'mu - lambda w'S w`.
pub fn markowitz_objective(w: &DVector<f64>, sigma: &DMatrix<f64>, mu: &DVector<f64>, lambda: f64) -> f64 {
    w.dot(mu) - lambda * portfolio_variance(w, sigma)
}

pub fn sharpe_ratio(w: &DVector<f64>, sigma: &DMatrix<f64>, mu: &DVector<f64>) -> f64 {
    w.dot(mu) / portfolio_variance(w, sigma).sqrt()
}

pub fn equal_weights(n: usize) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::BadInput("equal weights need at least one factor".into()));
    }
    Ok(WeightVector::new(
        DVector::from_element(n, 1.0 / n as f64),
        Scheme::Equal,
        true,
    ))
}

pub fn market_cap_weights(caps: &MarketCapWeights) -> WeightVector {
    WeightVector::new(caps.weights().clone(), Scheme::MarketCap, true)
}

fn check_mu(sigma: &CovEstimate, mu: &MomentEstimate) -> Result<()> {
    if mu.mu.len() != sigma.n() {
        return Err(Error::BadInput(format!(
            "{} expected returns for a {}x{} covariance",
            mu.mu.len(),
            sigma.n(),
            sigma.n()
        )));
    }
    Ok(())
}

pub fn gmv_closed_form(sigma: &CovEstimate) -> Result<WeightVector> {
    let inv_ones = linalg::spd_solve_vec(&sigma.sigma, &ones(sigma.n()))?;
    let total = inv_ones.sum();
    Ok(WeightVector::new(inv_ones / total, Scheme::Gmv, false))
}

pub fn max_sharpe_closed_form(sigma: &CovEstimate, mu: &MomentEstimate) -> Result<WeightVector> {
    check_mu(sigma, mu)?;
    let inv_mu = linalg::spd_solve_vec(&sigma.sigma, &mu.mu)?;
    let denominator = inv_mu.sum();
    // A non-positive denominator flips the normalization and picks the minimum-Sharpe portfolio.
    if !(denominator >= 1e-12) {
        return Err(Error::DegenerateTangency { denominator });
    }
    Ok(WeightVector::new(inv_mu / denominator, Scheme::MaxSharpe, false))
}

pub fn markowitz_closed_form(sigma: &CovEstimate, mu: &MomentEstimate, lambda: f64) -> Result<WeightVector> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::BadInput(format!(
            "Markowitz lambda must be positive, got {lambda}"
        )));
    }
    check_mu(sigma, mu)?;
    let n = sigma.n();
    let rhs = DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { mu.mu[r] });
    let solved = linalg::spd_solve(&sigma.sigma, &rhs)?;
    let inv_ones = solved.column(0).into_owned();
    let inv_mu = solved.column(1).into_owned();
    let v = (inv_mu.sum() - 2.0 * lambda) / inv_ones.sum();
    let w = (inv_mu - inv_ones * v) / (2.0 * lambda);
    Ok(WeightVector::new(w, Scheme::Markowitz { lambda }, false))
}

/// Objective for [`solve_constrained`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Gmv,
    MaxSharpe,
    Markowitz { lambda: f64 },
}

impl Objective {
    fn scheme(self) -> Scheme {
        match self {
            Objective::Gmv => Scheme::Gmv,
            Objective::MaxSharpe => Scheme::MaxSharpe,
            Objective::Markowitz { lambda } => Scheme::Markowitz { lambda },
        }
    }
}

/// Exact max-Sharpe weights on the support of `w`, kept only when they are
/// positive, no worse than `w`, and no excluded factor would raise the ratio.
fn polish_max_sharpe(s: &DMatrix<f64>, mu: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 1e-9).collect();
    if support.is_empty() {
        return None;
    }
    let sub = DMatrix::from_fn(support.len(), support.len(), |r, c| s[(support[r], support[c])]);
    let sub_mu = DVector::from_fn(support.len(), |r, _| mu[support[r]]);
    let z = sub.cholesky()?.solve(&sub_mu);
    let total = z.sum();
    if !(total > 0.0) || z.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let mut exact = DVector::zeros(w.len());
    for (k, &i) in support.iter().enumerate() {
        exact[i] = z[k] / total;
    }
    let ratio = |x: &DVector<f64>| x.dot(mu) / x.dot(&(s * x)).sqrt();
    if ratio(&exact) < ratio(w) - 1e-12 {
        return None;
    }
    let sw = s * &exact;
    let var = exact.dot(&sw);
    let ret = exact.dot(mu);
    let grad = mu / var.sqrt() - sw * (ret / (var * var.sqrt()));
    let scale = mu.amax() / var.sqrt();
    let kkt = (0..w.len()).all(|i| exact[i] > 0.0 || grad[i] <= 1e-9 * scale);
    kkt.then_some(exact)
}

/// Long-only, fully invested (`0 <= w <= 1`, `1'w = 1`) version of each scheme.
///
/// GMV and Markowitz are convex quadratics solved with the Lipschitz constant
/// taken from the largest eigenvalue; max-Sharpe maximizes `w'mu / sqrt(w'S w)`
/// directly with backtracked step sizes. Every run starts from equal weights.
/// When the iteration budget runs out the best iterate is returned with
/// `converged = false`.
pub fn solve_constrained(
    objective: Objective,
    sigma: &CovEstimate,
    mu: Option<&MomentEstimate>,
) -> Result<(WeightVector, SolverReport)> {
    let n = sigma.n();
    if n == 0 {
        return Err(Error::BadInput("empty covariance".into()));
    }
    let s = &sigma.sigma;
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if !linalg::is_symmetric(s, 1e-10 * scale) || !linalg::is_psd(s, 1e-10) {
        return Err(Error::BadInput(
            "covariance must be symmetric positive semidefinite".into(),
        ));
    }
    let eigen_max = linalg::symmetric_eigenvalues(s).last().copied().unwrap_or(0.0).max(0.0);
    let needs_mu = !matches!(objective, Objective::Gmv);
    let mu_vec = match (mu, needs_mu) {
        (Some(m), _) => {
            check_mu(sigma, m)?;
            m.mu.clone()
        }
        (None, false) => DVector::zeros(n),
        (None, true) => return Err(Error::MissingInput("expected returns for the objective".into())),
    };
    let x0 = DVector::from_element(n, 1.0 / n as f64);
    let (w, report) = match objective {
        Objective::Gmv => {
            let opts = SolverOptions {
                lipschitz: 2.0 * eigen_max,
                ..Default::default()
            };
            minimize(
                |w| {
                    let sw = s * w;
                    (w.dot(&sw), sw * 2.0)
                },
                &x0,
                opts,
            )
        }
        Objective::Markowitz { lambda } => {
            if !(lambda > 0.0) || !lambda.is_finite() {
                return Err(Error::BadInput(format!(
                    "Markowitz lambda must be positive, got {lambda}"
                )));
            }
            let opts = SolverOptions {
                lipschitz: 2.0 * lambda * eigen_max,
                ..Default::default()
            };
            minimize(
                |w| {
                    let sw = s * w;
                    (lambda * w.dot(&sw) - w.dot(&mu_vec), sw * (2.0 * lambda) - &mu_vec)
                },
                &x0,
                opts,
            )
        }
        Objective::MaxSharpe => {
            let min_var = linalg::symmetric_eigenvalues(s).first().copied().unwrap_or(0.0);
            if !(min_var > 0.0) {
                return Err(Error::SingularCovariance {
                    condition: f64::INFINITY,
                });
            }
            let opts = SolverOptions {
                lipschitz: mu_vec.amax().max(1e-12) / min_var.sqrt(),
                adaptive: true,
                ..Default::default()
            };
            let (w, report) = minimize(
                |w| {
                    let sw = s * w;
                    let var = w.dot(&sw);
                    let vol = var.sqrt();
                    let ret = w.dot(&mu_vec);
                    let value = -ret / vol;
                    let grad = -(&mu_vec / vol - sw * (ret / (var * vol)));
                    (value, grad)
                },
                &x0,
                opts,
            );
            match polish_max_sharpe(s, &mu_vec, &w) {
                Some(exact) if !report.converged => (
                    exact,
                    SolverReport {
                        converged: true,
                        ..report
                    },
                ),
                _ => (w, report),
            }
        }
    };
    if !report.converged {
        log::warn!(
            "{:?} solver stopped after {} iterations (residual {:.3e})",
            objective,
            report.iterations,
            report.final_gradient_norm
        );
    }
    Ok((WeightVector::new(w, objective.scheme(), true), report))
}

/// CAPM betas of each factor's excess return against the benchmark's excess return.
pub fn implied_betas(panel: &ReturnPanel, window: RowRange) -> Result<DVector<f64>> {
    panel.check_range(window)?;
    if window.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: window.len(),
        });
    }
    let rf = panel.risk_free_returns(window);
    let bench: Vec<f64> = panel
        .benchmark_returns(window)
        .iter()
        .zip(&rf)
        .map(|(b, f)| b - f)
        .collect();
    let bench_mean = mean(&bench);
    let bench_var: f64 = bench.iter().map(|b| (b - bench_mean).powi(2)).sum();
    if !(bench_var > 0.0) {
        return Err(Error::DegenerateSeries(
            "benchmark excess return has zero variance".into(),
        ));
    }
    Ok(DVector::from_fn(panel.n_factors(), |f, _| {
        let excess: Vec<f64> = (window.start..window.end)
            .zip(&rf)
            .map(|(r, rf)| panel.factor_return(r, f) - rf)
            .collect();
        let m = mean(&excess);
        let cov: f64 = excess.iter().zip(&bench).map(|(x, b)| (x - m) * (b - bench_mean)).sum();
        cov / bench_var
    }))
}

/// Inverts `beta = S w / (w'S w)` for `w`. No constraints are applied.
pub fn weights_from_betas(sigma: &CovEstimate, betas: &DVector<f64>) -> Result<WeightVector> {
    if betas.len() != sigma.n() {
        return Err(Error::BadInput("beta vector length does not match covariance".into()));
    }
    let inv_beta = linalg::spd_solve_vec(&sigma.sigma, betas)?;
    let quad = betas.dot(&inv_beta);
    if !(quad > 0.0) {
        return Err(Error::DegenerateSeries("all implied betas are zero".into()));
    }
    Ok(WeightVector::new(inv_beta / quad, Scheme::ImpliedBeta, false))
}

pub fn implied_beta_weights(sigma: &CovEstimate, panel: &ReturnPanel, window: RowRange) -> Result<WeightVector> {
    weights_from_betas(sigma, &implied_betas(panel, window)?)
}

/// Markowitz aversion used when a scheme name carries none.
pub const DEFAULT_MARKOWITZ_LAMBDA: f64 = 2.0;

impl Scheme {
    /// The six allocation schemes in table column order.
    pub fn table_order(markowitz_lambda: f64) -> Vec<Scheme> {
        vec![
            Scheme::MarketCap,
            Scheme::Equal,
            Scheme::ImpliedBeta,
            Scheme::Gmv,
            Scheme::Markowitz {
                lambda: markowitz_lambda,
            },
            Scheme::MaxSharpe,
        ]
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    /// Accepts the [`Scheme::key`] spellings; Markowitz and Black-Litterman take
    /// an optional `:lambda` suffix, e.g. `markowitz:3`.
    fn from_str(s: &str) -> Result<Self> {
        let lowered = s.trim().to_ascii_lowercase();
        let (name, arg) = match lowered.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (lowered.as_str(), None),
        };
        let lambda = match arg {
            Some(a) => a
                .parse::<f64>()
                .map_err(|_| Error::BadInput(format!("bad lambda in scheme `{s}`")))?,
            None => DEFAULT_MARKOWITZ_LAMBDA,
        };
        let scheme = match name {
            "equal" => Scheme::Equal,
            "market_cap" | "marketcap" => Scheme::MarketCap,
            "implied_beta" | "beta" => Scheme::ImpliedBeta,
            "gmv" => Scheme::Gmv,
            "max_sharpe" | "sharpe" => Scheme::MaxSharpe,
            "markowitz" => Scheme::Markowitz { lambda },
            "black_litterman" | "bl" => Scheme::BlackLitterman { lambda },
            _ => return Err(Error::BadInput(format!("unknown scheme `{s}`"))),
        };
        if arg.is_some() && !matches!(scheme, Scheme::Markowitz { .. } | Scheme::BlackLitterman { .. }) {
            return Err(Error::BadInput(format!("scheme `{name}` takes no lambda")));
        }
        Ok(scheme)
    }
}

/// Everything a non-Black-Litterman scheme may need from one estimation window.
#[derive(Debug, Clone, Copy)]
pub struct AllocationInputs<'a> {
    pub sigma: &'a CovEstimate,
    pub mu: &'a MomentEstimate,
    pub panel: &'a ReturnPanel,
    pub window: RowRange,
    pub caps: Option<&'a MarketCapWeights>,
    /// Use the long-only solver for GMV, max-Sharpe and Markowitz.
    pub constrained: bool,
}

/// Weights for `scheme` from `inputs`. Black-Litterman needs views and is handled by the callers.
pub fn allocate_scheme(scheme: Scheme, inputs: &AllocationInputs<'_>) -> Result<WeightVector> {
    let constrained = |objective| solve_constrained(objective, inputs.sigma, Some(inputs.mu)).map(|(w, _)| w);
    match scheme {
        Scheme::Equal => equal_weights(inputs.sigma.n()),
        Scheme::MarketCap => {
            let caps = inputs
                .caps
                .ok_or_else(|| Error::MissingInput("market-cap weights are not loaded".into()))?;
            if caps.weights().len() != inputs.sigma.n() {
                return Err(Error::UniverseMismatch(
                    "market caps do not match the factor count".into(),
                ));
            }
            Ok(market_cap_weights(caps))
        }
        Scheme::ImpliedBeta => implied_beta_weights(inputs.sigma, inputs.panel, inputs.window),
        Scheme::Gmv if inputs.constrained => constrained(Objective::Gmv),
        Scheme::Gmv => gmv_closed_form(inputs.sigma),
        Scheme::MaxSharpe if inputs.constrained => constrained(Objective::MaxSharpe),
        Scheme::MaxSharpe => max_sharpe_closed_form(inputs.sigma, inputs.mu),
        Scheme::Markowitz { lambda } if inputs.constrained => constrained(Objective::Markowitz { lambda }),
        Scheme::Markowitz { lambda } => markowitz_closed_form(inputs.sigma, inputs.mu, lambda),
        Scheme::BlackLitterman { .. } => Err(Error::BadInput(
            "Black-Litterman weights need views; use the blacklitterman module".into(),
        )),
    }
}
