//! Static, rolling Black-Litterman and contrarian backtests.
//!
//! A rolling round starting at row `s` uses
//!
//! ```text
//! [s, s + train_span + L)              training rows for the view model
//! [s + train_span, s + train_span + L) estimation rows for S, mu and the prior
//! [e, e + window),  e = s + train_span + L   invested rows
//! ```
//!
//! and the next round starts `window` rows later. Partial final windows are dropped.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::allocate::{allocate_scheme, solve_constrained, AllocationInputs, Objective, Scheme, WeightVector};
use crate::blacklitterman::{bl_pipeline, market_risk_aversion, RiskAversion, ViewSet, DYNAMIC_TAU};
use crate::covariance::{estimate, mean_excess, EstimatorChoice, MomentEstimate};
use crate::error::{Error, Result};
use crate::marketdata::{mean, MarketCapWeights, ReturnPanel, RowRange, TRADING_DAYS};
use crate::viewgen::{GeneratedView, ViewGenerator, ViewModelConfig, ViewRecord};

/// Series label of the contrarian strategy.
pub const CONTRARIAN_SERIES: &str = "contrarian";
/// Factors held by the contrarian strategy each week.
pub const CONTRARIAN_PICKS: usize = 5;

/// One holding period of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceRecord {
    /// First invested date.
    pub date: NaiveDate,
    /// Last invested date.
    pub end_date: NaiveDate,
    pub series: String,
    pub weights: WeightVector,
    /// `w' (per-factor cumulative return over the period)`.
    pub realized_period_return: f64,
    /// Compounded risk-free return over the same period.
    pub risk_free_return: f64,
    pub view: Option<GeneratedView>,
}

/// Windows and view of one rolling round, kept for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMeta {
    pub round: usize,
    pub generator: String,
    pub training_start: NaiveDate,
    pub training_end: NaiveDate,
    /// Newest date read by any training label.
    pub last_label_date: Option<NaiveDate>,
    pub estimation_start: NaiveDate,
    pub estimation_end: NaiveDate,
    pub invest_start: NaiveDate,
    pub invest_end: NaiveDate,
    pub view: Option<ViewRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub factor_names: Vec<String>,
    /// Holding periods per year, used to annualize.
    pub periods_per_year: f64,
    pub records: Vec<RebalanceRecord>,
    pub rounds: Vec<RoundMeta>,
}

#[derive(Serialize, Deserialize)]
struct LedgerJson {
    factor_names: Vec<String>,
    periods_per_year: f64,
    rounds: Vec<RoundJson>,
}

#[derive(Serialize, Deserialize)]
struct RoundJson {
    date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<RoundMeta>,
    records: Vec<RebalanceRecord>,
}

const FIXED_COLUMNS: [&str; 10] = [
    "date",
    "end_date",
    "series",
    "scheme",
    "lambda",
    "constrained",
    "period_return",
    "risk_free_return",
    "view_factor",
    "view_q",
];

impl BacktestLedger {
    pub fn new(factor_names: Vec<String>, periods_per_year: f64) -> Self {
        Self {
            factor_names,
            periods_per_year,
            records: Vec::new(),
            rounds: Vec::new(),
        }
    }

    /// Series labels in order of first appearance.
    pub fn series(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.series) {
                out.push(r.series.clone());
            }
        }
        out
    }

    pub fn records_for<'a>(&'a self, series: &'a str) -> impl Iterator<Item = &'a RebalanceRecord> + 'a {
        self.records.iter().filter(move |r| r.series == series)
    }

    /// Wealth path starting at 1.0, one entry per record after that.
    pub fn wealth(&self, series: &str) -> Vec<f64> {
        let mut path = vec![1.0];
        let mut w = 1.0;
        for r in self.records_for(series) {
            w *= 1.0 + r.realized_period_return;
            path.push(w);
        }
        path
    }

    pub fn final_wealth(&self, series: &str) -> f64 {
        self.wealth(series).last().copied().unwrap_or(1.0)
    }

    /// Fails with [`Error::Ruin`] at the first period that leaves a series with no wealth.
    pub fn check_solvency(&self) -> Result<()> {
        let mut wealth: BTreeMap<&str, f64> = BTreeMap::new();
        for r in &self.records {
            let w = wealth.entry(r.series.as_str()).or_insert(1.0);
            *w *= 1.0 + r.realized_period_return;
            if !(*w > 0.0) {
                return Err(Error::Ruin {
                    scheme: r.series.clone(),
                    date: r.end_date,
                });
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(self.factor_names.iter().cloned());
        out.write_record(&header)?;
        for r in &self.records {
            let lambda = match r.weights.scheme {
                Scheme::Markowitz { lambda } | Scheme::BlackLitterman { lambda } => format!("{lambda:?}"),
                _ => String::new(),
            };
            let mut row = vec![
                r.date.to_string(),
                r.end_date.to_string(),
                r.series.clone(),
                r.weights.scheme.key().to_string(),
                lambda,
                r.weights.constrained.to_string(),
                format!("{:?}", r.realized_period_return),
                format!("{:?}", r.risk_free_return),
                r.view.as_ref().map(|v| v.factor.to_string()).unwrap_or_default(),
                r.view.as_ref().map(|v| format!("{:?}", v.q)).unwrap_or_default(),
            ];
            row.extend(r.weights.weights.iter().map(|w| format!("{w:?}")));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<ledger csv>", e))?;
        Ok(())
    }

    /// Rebuilds records from [`Self::write_csv`] output; round metadata is not part of the CSV.
    pub fn read_csv<R: Read>(reader: R, periods_per_year: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < FIXED_COLUMNS.len() || headers.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
            return Err(Error::BadInput("ledger CSV header does not match".into()));
        }
        let factor_names: Vec<String> = headers.iter().skip(FIXED_COLUMNS.len()).map(String::from).collect();
        let n = factor_names.len();
        let mut ledger = Self::new(factor_names, periods_per_year);
        let bad = |what: &str, line: usize| Error::BadInput(format!("ledger row {line}: bad {what}"));
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let date = |i: usize| rec[i].parse::<NaiveDate>().map_err(|_| bad("date", line));
            let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(FIXED_COLUMNS[i], line));
            let scheme: Scheme = if rec[4].is_empty() {
                rec[3].parse()?
            } else {
                format!("{}:{}", &rec[3], &rec[4]).parse()?
            };
            let weights = (0..n)
                .map(|k| {
                    rec[FIXED_COLUMNS.len() + k]
                        .parse::<f64>()
                        .map_err(|_| bad("weight", line))
                })
                .collect::<Result<Vec<_>>>()?;
            let view = if rec[8].is_empty() {
                None
            } else {
                let factor = rec[8].parse::<usize>().map_err(|_| bad("view_factor", line))?;
                if factor >= n {
                    return Err(bad("view_factor", line));
                }
                let mut v = GeneratedView::new(factor, n);
                v.q = num(9)?;
                Some(v)
            };
            ledger.records.push(RebalanceRecord {
                date: date(0)?,
                end_date: date(1)?,
                series: rec[2].to_string(),
                weights: WeightVector::new(
                    DVector::from_vec(weights),
                    scheme,
                    rec[5].parse::<bool>().map_err(|_| bad("constrained", line))?,
                ),
                realized_period_return: num(6)?,
                risk_free_return: num(7)?,
                view,
            });
        }
        Ok(ledger)
    }

    /// JSON with records nested under their rebalance date (and round metadata when present).
    pub fn to_json(&self) -> Result<String> {
        let mut rounds: Vec<RoundJson> = Vec::new();
        for r in &self.records {
            match rounds.last_mut() {
                Some(last) if last.date == r.date => last.records.push(r.clone()),
                _ => rounds.push(RoundJson {
                    date: r.date,
                    meta: self.rounds.iter().find(|m| m.invest_start == r.date).cloned(),
                    records: vec![r.clone()],
                }),
            }
        }
        Ok(serde_json::to_string_pretty(&LedgerJson {
            factor_names: self.factor_names.clone(),
            periods_per_year: self.periods_per_year,
            rounds,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: LedgerJson = serde_json::from_str(text)?;
        let mut ledger = Self::new(parsed.factor_names, parsed.periods_per_year);
        for round in parsed.rounds {
            if let Some(meta) = round.meta {
                ledger.rounds.push(meta);
            }
            ledger.records.extend(round.records);
        }
        Ok(ledger)
    }
}

fn period_record(
    panel: &ReturnPanel,
    range: RowRange,
    series: &str,
    weights: &WeightVector,
    view: Option<GeneratedView>,
) -> RebalanceRecord {
    let cumulative = panel.cumulative_factor_returns(range);
    RebalanceRecord {
        date: panel.dates()[range.start],
        end_date: panel.dates()[range.end - 1],
        series: series.to_string(),
        weights: weights.clone(),
        realized_period_return: weights.weights.dot(&cumulative),
        risk_free_return: panel.cumulative_risk_free(range),
        view,
    }
}

/// Inputs of a buy-and-hold backtest over the whole panel.
#[derive(Debug, Clone)]
pub struct StaticSetup<'a> {
    pub schemes: Vec<Scheme>,
    /// Views for Black-Litterman schemes; none means no views.
    pub views: Option<&'a ViewSet>,
    pub caps: Option<&'a MarketCapWeights>,
    pub estimator: EstimatorChoice,
    /// Long-only solver for GMV, max-Sharpe and Markowitz.
    pub constrained: bool,
}

/// Black-Litterman weights over `window` with a market-cap prior and the
/// market-calibrated aversion for reverse optimization.
pub fn static_bl_weights(
    panel: &ReturnPanel,
    window: RowRange,
    caps: &MarketCapWeights,
    views: Option<&ViewSet>,
    estimator: EstimatorChoice,
    lambda: RiskAversion,
) -> Result<crate::blacklitterman::BlResult> {
    let sigma = estimate(panel, window, estimator)?;
    let prior = crate::allocate::market_cap_weights(caps);
    if prior.len() != sigma.n() {
        return Err(Error::UniverseMismatch(
            "market caps do not match the factor count".into(),
        ));
    }
    let lambda_mkt = market_risk_aversion(panel, window)?;
    let empty = ViewSet::empty(sigma.n(), crate::blacklitterman::STATIC_TAU);
    bl_pipeline(&prior, &sigma, views.unwrap_or(&empty), lambda_mkt, lambda)
}

/// Computes each scheme's weights once over the full panel and accrues daily returns.
pub fn run_static(panel: &ReturnPanel, setup: &StaticSetup<'_>) -> Result<BacktestLedger> {
    let window = panel.full_range();
    let sigma = estimate(panel, window, setup.estimator)?;
    let mu = mean_excess(panel, window)?;
    let inputs = AllocationInputs {
        sigma: &sigma,
        mu: &mu,
        panel,
        window,
        caps: setup.caps,
        constrained: setup.constrained,
    };
    let mut weights = Vec::with_capacity(setup.schemes.len());
    for scheme in &setup.schemes {
        let w = match *scheme {
            Scheme::BlackLitterman { lambda } => {
                let caps = setup
                    .caps
                    .ok_or_else(|| Error::MissingInput("Black-Litterman prior needs market caps".into()))?;
                let aversion = RiskAversion::custom(lambda)?;
                static_bl_weights(panel, window, caps, setup.views, setup.estimator, aversion)?.posterior_weights
            }
            other => allocate_scheme(other, &inputs)?,
        };
        weights.push(w);
    }
    let mut ledger = BacktestLedger::new(panel.universe().factor_names(), TRADING_DAYS);
    for t in 0..panel.len() {
        for w in &weights {
            ledger
                .records
                .push(period_record(panel, RowRange::new(t, t + 1), w.scheme.key(), w, None));
        }
    }
    ledger.check_solvency()?;
    Ok(ledger)
}

/// How the Black-Litterman posterior is turned into invested weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlInvestment {
    /// Long-only Markowitz weights on the posterior returns.
    Constrained,
    /// `S^-1 mu_BL / (2 lambda)` as is.
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicSetup {
    pub model: ViewModelConfig,
    /// Aversion for the Markowitz prior, reverse optimization and posterior weights.
    pub lambda: f64,
    pub estimator: EstimatorChoice,
    pub tau: f64,
    pub investment: BlInvestment,
}

impl Default for DynamicSetup {
    fn default() -> Self {
        Self {
            model: ViewModelConfig::default(),
            lambda: 2.0,
            estimator: EstimatorChoice::Sample,
            tau: DYNAMIC_TAU,
            investment: BlInvestment::Constrained,
        }
    }
}

impl DynamicSetup {
    /// Rows needed for one round.
    pub fn round_rows(&self) -> usize {
        self.model.training_rows() + self.model.window
    }

    pub fn round_count(&self, panel_len: usize) -> usize {
        if panel_len < self.round_rows() {
            0
        } else {
            (panel_len - self.round_rows()) / self.model.window + 1
        }
    }
}

/// Series labels of a dynamic run, in record order within each round.
pub fn dynamic_series(lambda: f64) -> Vec<Scheme> {
    vec![
        Scheme::Equal,
        Scheme::Gmv,
        Scheme::MaxSharpe,
        Scheme::Markowitz { lambda },
        Scheme::BlackLitterman { lambda },
    ]
}

/// Rolling Black-Litterman backtest with a Markowitz prior and one generated view per round.
pub fn run_dynamic_bl(
    panel: &ReturnPanel,
    setup: &DynamicSetup,
    generator: &dyn ViewGenerator,
) -> Result<BacktestLedger> {
    setup.model.validate()?;
    let aversion = RiskAversion::custom(setup.lambda)?;
    let rounds = setup.round_count(panel.len());
    if rounds == 0 {
        return Err(Error::InsufficientData {
            needed: setup.round_rows(),
            got: panel.len(),
        });
    }
    let (l, h, span) = (setup.model.sequence_length, setup.model.window, setup.model.train_span);
    let dates = panel.dates();
    let mut ledger = BacktestLedger::new(panel.universe().factor_names(), TRADING_DAYS / h as f64);
    for round in 0..rounds {
        let s = round * h;
        let training = RowRange::new(s, s + span + l);
        let estimation = RowRange::new(s + span, s + span + l);
        let invest = RowRange::new(estimation.end, estimation.end + h);
        let model = ViewModelConfig {
            seed: setup.model.seed.wrapping_add(round as u64),
            ..setup.model
        };
        let outcome = generator.generate(panel, training, estimation, &model)?;
        let sigma = estimate(panel, estimation, setup.estimator)?;
        let mu = mean_excess(panel, estimation)?;
        let inputs = AllocationInputs {
            sigma: &sigma,
            mu: &mu,
            panel,
            window: estimation,
            caps: None,
            constrained: true,
        };
        let comparison = [
            Scheme::Equal,
            Scheme::Gmv,
            Scheme::MaxSharpe,
            Scheme::Markowitz { lambda: setup.lambda },
        ]
        .into_iter()
        .map(|scheme| allocate_scheme(scheme, &inputs))
        .collect::<Result<Vec<_>>>()?;
        let prior = &comparison[3];
        let views = outcome.view.to_view_set(&sigma, setup.tau)?;
        let bl = bl_pipeline(prior, &sigma, &views, aversion, aversion)?;
        let bl_weights = match setup.investment {
            BlInvestment::Unconstrained => bl.posterior_weights,
            BlInvestment::Constrained => {
                let posterior = MomentEstimate::from_vector(bl.posterior_mu.clone());
                let (w, _) =
                    solve_constrained(Objective::Markowitz { lambda: setup.lambda }, &sigma, Some(&posterior))?;
                WeightVector::new(w.weights, Scheme::BlackLitterman { lambda: setup.lambda }, true)
            }
        };
        for w in &comparison {
            ledger
                .records
                .push(period_record(panel, invest, w.scheme.key(), w, None));
        }
        ledger.records.push(period_record(
            panel,
            invest,
            bl_weights.scheme.key(),
            &bl_weights,
            Some(outcome.view.clone()),
        ));
        ledger.rounds.push(RoundMeta {
            round,
            generator: generator.name().to_string(),
            training_start: dates[training.start],
            training_end: dates[training.end - 1],
            last_label_date: outcome.last_label_row.map(|r| dates[r]),
            estimation_start: dates[estimation.start],
            estimation_end: dates[estimation.end - 1],
            invest_start: dates[invest.start],
            invest_end: dates[invest.end - 1],
            view: Some(outcome.view.record(dates[invest.start])),
        });
        log::info!(
            "round {round}/{rounds}: view on factor {} invested {}..{}",
            outcome.view.factor,
            dates[invest.start],
            dates[invest.end - 1]
        );
    }
    ledger.check_solvency()?;
    Ok(ledger)
}

/// Result of the look-ahead check for one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundAudit {
    pub round: usize,
    pub last_label_date: Option<NaiveDate>,
    pub last_input_date: NaiveDate,
    pub first_invested_date: NaiveDate,
    pub passed: bool,
}

/// Checks that no round trained on, or estimated from, a date inside its invested window.
pub fn audit_no_lookahead(ledger: &BacktestLedger) -> Vec<RoundAudit> {
    ledger
        .rounds
        .iter()
        .map(|m| {
            let first_invested = ledger
                .records
                .iter()
                .filter(|r| r.date >= m.invest_start && r.date <= m.invest_end)
                .map(|r| r.date)
                .min()
                .unwrap_or(m.invest_start)
                .min(m.invest_start);
            let labels_ok = m.last_label_date.is_none_or(|d| d < first_invested);
            let latest_input = m.estimation_end.max(m.training_end);
            RoundAudit {
                round: m.round,
                last_label_date: m.last_label_date,
                last_input_date: latest_input,
                first_invested_date: first_invested,
                passed: labels_ok && latest_input < first_invested,
            }
        })
        .collect()
}

/// Weekly mean reversion: hold the five worst factors of last ISO week, equally weighted.
pub fn run_contrarian(panel: &ReturnPanel) -> Result<BacktestLedger> {
    let mut weeks: Vec<RowRange> = Vec::new();
    let mut current_week = None;
    for (row, date) in panel.dates().iter().enumerate() {
        let week = date.iso_week();
        if current_week == Some(week) {
            if let Some(last) = weeks.last_mut() {
                last.end = row + 1;
            }
        } else {
            weeks.push(RowRange::new(row, row + 1));
            current_week = Some(week);
        }
    }
    if weeks.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: weeks.len(),
        });
    }
    let n = panel.n_factors();
    let picks = CONTRARIAN_PICKS.min(n);
    let mut ledger = BacktestLedger::new(panel.universe().factor_names(), 52.0);
    for pair in weeks.windows(2) {
        let chosen = bottom_k(&panel.cumulative_factor_returns(pair[0]), picks);
        let mut w = DVector::zeros(n);
        for &f in &chosen {
            w[f] = 1.0 / picks as f64;
        }
        let weights = WeightVector::new(w, Scheme::Equal, true);
        ledger
            .records
            .push(period_record(panel, pair[1], CONTRARIAN_SERIES, &weights, None));
    }
    ledger.check_solvency()?;
    Ok(ledger)
}

/// Indices of the `k` smallest values, ties broken by lower index, in ascending index order.
pub fn bottom_k(values: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();
    chosen
}

/// Performance summary of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub series: String,
    pub periods: usize,
    pub cumulative_return: f64,
    pub annualized_volatility: f64,
    /// Largest peak-to-trough loss as a positive fraction.
    pub max_drawdown: f64,
    /// Annualized mean excess over the risk-free return per unit of volatility; `None` when flat.
    pub sharpe: Option<f64>,
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn ledger_report(ledger: &BacktestLedger) -> Vec<SeriesReport> {
    let annualize = ledger.periods_per_year.sqrt();
    ledger
        .series()
        .into_iter()
        .map(|series| {
            let returns: Vec<f64> = ledger.records_for(&series).map(|r| r.realized_period_return).collect();
            let excess: Vec<f64> = ledger
                .records_for(&series)
                .map(|r| r.realized_period_return - r.risk_free_return)
                .collect();
            let wealth = ledger.wealth(&series);
            let mut peak = f64::NEG_INFINITY;
            let mut max_drawdown = 0.0_f64;
            for w in &wealth {
                peak = peak.max(*w);
                max_drawdown = max_drawdown.max(1.0 - w / peak);
            }
            let excess_std = sample_std(&excess);
            let sharpe = (excess_std > 0.0).then(|| mean(&excess) / excess_std * annualize);
            SeriesReport {
                periods: returns.len(),
                cumulative_return: wealth.last().copied().unwrap_or(1.0) - 1.0,
                annualized_volatility: sample_std(&returns) * annualize,
                max_drawdown,
                sharpe,
                series,
            }
        })
        .collect()
}
