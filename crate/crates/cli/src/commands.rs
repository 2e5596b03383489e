//! One function per subcommand. Each writes into `{out}/{run_id}/` and finishes with `run_meta.json`.

use std::path::Path;

use factorbl_core::allocate::{allocate_scheme, AllocationInputs, DEFAULT_MARKOWITZ_LAMBDA};
use factorbl_core::backtest::{
    audit_no_lookahead, ledger_report, run_contrarian, run_dynamic_bl, run_static, static_bl_weights, BlInvestment,
    DynamicSetup, StaticSetup,
};
use factorbl_core::blacklitterman::{
    build_views, resolve_aversion, scenario_aversion, AversionChoice, AversionSource, ViewFile, ViewSet, STATIC_TAU,
};
use factorbl_core::covariance::{estimate, mean_excess, EstimatorChoice};
use factorbl_core::marketdata::{
    correlation_matrix, load_market_caps, load_prices, summary_stats, MarketCapWeights, ReturnPanel,
};
use factorbl_core::report::{
    cumulative_chart, emit_bl_table, heatmap_chart, sweep_chart, weight_path_chart, weights_bar_chart,
    write_series_reports, write_summary_table, PercentTable, ReportLayout, RunMeta,
};
use factorbl_core::report::{render_chart, ChartSpec};
use factorbl_core::robustness::{
    default_multipliers, estimator_contrast, volatility_sweep, weight_paths, write_sweep_csv, OmegaMode, SweepSide,
};
use factorbl_core::viewgen::{LstmViewGenerator, MomentumViewGenerator, ViewGenerator};
use factorbl_core::{BacktestLedger, Error, FactorUniverse, RiskAversion, Scheme};
use nalgebra::DVector;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{BacktestMode, CliError, Command, GeneratorKind};

/// Scenario columns of the `bl` comparison table, in display order.
const SCENARIOS: [(AversionSource, &str); 4] = [
    (AversionSource::Empirical, "Empirical Mkt"),
    (AversionSource::NearKelly, "Kelly"),
    (AversionSource::Average, "Market"),
    (AversionSource::Averse, "Risk Averse"),
];

/// Data and bookkeeping shared by the commands.
struct Run<'a> {
    config: &'a RunConfig,
    layout: ReportLayout,
    command: &'a Command,
    artifacts: Vec<String>,
    lambda: Option<RiskAversion>,
}

impl<'a> Run<'a> {
    fn start(command: &'a Command, config: &'a RunConfig) -> Result<Self, CliError> {
        let layout = ReportLayout::new(&config.out, &run_id(command, config)?);
        layout.create()?;
        Ok(Self {
            config,
            layout,
            command,
            artifacts: Vec::new(),
            lambda: None,
        })
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.layout.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn table<F>(&mut self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> factorbl_core::Result<()>,
    {
        let path = self.layout.table(name);
        self.layout.write_with(&path, fill)?;
        self.artifacts.push(self.relative(&path));
        Ok(())
    }

    fn chart(&mut self, spec: ChartSpec) -> Result<(), CliError> {
        render_chart(&spec)?;
        self.artifacts.push(self.relative(&spec.output));
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        let lambda_source = match (self.lambda, self.config.lambda) {
            (Some(l), _) => l.source.to_string(),
            (None, Some(choice)) => choice_label(choice),
            (None, None) => "none".into(),
        };
        let meta = RunMeta {
            run_id: self
                .layout
                .root
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            command: command_name(self.command).into(),
            seed: self.config.seed,
            estimator: estimator_label(self.config.estimator).into(),
            lambda_source,
            lambda: self.lambda.map(|l| l.lambda),
            config: meta_config(self.command, self.config)?,
            artifacts: self.artifacts,
        };
        meta.write(&self.layout.meta())?;
        println!("{}", self.layout.root.display());
        Ok(())
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Stats => "stats",
        Command::Allocate { .. } => "allocate",
        Command::Bl => "bl",
        Command::Backtest { .. } => "backtest",
        Command::Sweep { .. } => "sweep",
        Command::Report { .. } => "report",
        Command::Synth { .. } => "synth",
    }
}

fn estimator_label(choice: EstimatorChoice) -> &'static str {
    match choice {
        EstimatorChoice::Sample => "sample",
        EstimatorChoice::Shrunk => "shrunk",
    }
}

fn choice_label(choice: AversionChoice) -> String {
    match choice {
        AversionChoice::Scenario(kind) => kind.to_string(),
        AversionChoice::Value(_) => AversionSource::Custom.to_string(),
    }
}

fn meta_config(command: &Command, config: &RunConfig) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(serde_json::json!({ "run": config, "args": command }))
        .map_err(|e| CliError::Core(Error::Json(e)))
}

/// `{command}-{first 12 hex digits of the config digest}`, stable across reruns.
fn run_id(command: &Command, config: &RunConfig) -> Result<String, CliError> {
    let text = meta_config(command, config)?.to_string();
    let digest = Sha256::digest(text.as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    Ok(format!("{}-{hex}", command_name(command)))
}

fn universe(config: &RunConfig) -> Result<FactorUniverse, CliError> {
    Ok(match &config.universe {
        Some(path) => FactorUniverse::load(path)?,
        None => FactorUniverse::default_universe(),
    })
}

fn panel(config: &RunConfig) -> Result<ReturnPanel, CliError> {
    let prices = config.require_prices()?;
    Ok(load_prices(prices, universe(config)?)?)
}

/// The bundled cap table only describes the bundled universe.
fn caps(config: &RunConfig, panel: &ReturnPanel) -> Result<Option<MarketCapWeights>, CliError> {
    match (&config.caps, &config.universe) {
        (Some(path), _) => Ok(Some(load_market_caps(path, panel.universe())?)),
        (None, None) => Ok(Some(MarketCapWeights::bundled())),
        (None, Some(_)) => Ok(None),
    }
}

fn views(config: &RunConfig, panel: &ReturnPanel, default_tau: f64) -> Result<ViewSet, CliError> {
    let sigma = estimate(panel, panel.full_range(), config.estimator)?;
    match &config.views {
        Some(path) => {
            let file = ViewFile::load(path)?;
            Ok(build_views(
                &file.view,
                panel.universe(),
                &sigma,
                file.tau.unwrap_or(default_tau),
            )?)
        }
        None => Ok(ViewSet::empty(sigma.n(), default_tau)),
    }
}

fn require_caps(caps: Option<MarketCapWeights>) -> Result<MarketCapWeights, CliError> {
    caps.ok_or_else(|| CliError::Usage("a custom universe needs --caps for market-cap weights".into()))
}

pub fn execute(command: &Command, config: &RunConfig) -> Result<(), CliError> {
    match command {
        Command::Stats => stats(command, config),
        Command::Allocate { schemes, unconstrained } => allocate(command, config, schemes, !unconstrained),
        Command::Bl => black_litterman(command, config),
        Command::Backtest {
            mode,
            generator,
            unconstrained_bl,
            unconstrained,
        } => backtest(command, config, *mode, *generator, *unconstrained_bl, !unconstrained),
        Command::Sweep {
            prior,
            fixed_omega,
            unconstrained,
        } => sweep(command, config, prior, *fixed_omega, !unconstrained),
        Command::Report {
            ledger,
            periods_per_year,
        } => report(command, config, ledger, *periods_per_year),
        Command::Synth { days, output } => synth(config, *days, output),
    }
}

fn stats(command: &Command, config: &RunConfig) -> Result<(), CliError> {
    let panel = panel(config)?;
    let mut run = Run::start(command, config)?;
    let summary = summary_stats(&panel);
    run.table("summary_stats.csv", |w| write_summary_table(w, &summary))?;
    let names = panel.universe().factor_names();
    let corr = correlation_matrix(&panel)?;
    run.chart(heatmap_chart(
        &names,
        &corr,
        "Factor return correlation",
        run.layout.chart("correlation_heatmap.svg"),
    ))?;
    // Equal-weight daily ledger per factor gives each factor's own wealth path.
    let mut ledger = BacktestLedger::new(names.clone(), 252.0);
    let range = panel.full_range();
    let rf = panel.risk_free_returns(range);
    for (f, name) in names.iter().enumerate() {
        let mut weights = DVector::zeros(names.len());
        weights[f] = 1.0;
        for row in range.start..range.end {
            ledger.records.push(factorbl_core::RebalanceRecord {
                date: panel.dates()[row],
                end_date: panel.dates()[row],
                series: name.clone(),
                weights: factorbl_core::WeightVector::new(weights.clone(), Scheme::Equal, true),
                realized_period_return: panel.factor_return(row, f),
                risk_free_return: rf[row - range.start],
                view: None,
            });
        }
    }
    run.chart(cumulative_chart(
        &ledger,
        "Cumulative factor returns",
        run.layout.chart("cumulative_returns.svg"),
    ))?;
    run.finish()
}

/// A requested weight column; Black-Litterman without an explicit lambda uses the configured aversion.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    Scheme(Scheme),
    BlackLitterman(Option<f64>),
}

fn parse_schemes(keys: &[String]) -> Result<Vec<Column>, CliError> {
    let keys: Vec<&str> = keys.iter().map(|k| k.trim()).filter(|k| !k.is_empty()).collect();
    if keys.is_empty() {
        let mut all: Vec<Column> = Scheme::table_order(DEFAULT_MARKOWITZ_LAMBDA)
            .into_iter()
            .map(Column::Scheme)
            .collect();
        all.push(Column::BlackLitterman(None));
        return Ok(all);
    }
    keys.into_iter()
        .map(|k| match k.parse::<Scheme>() {
            Ok(Scheme::BlackLitterman { lambda }) => Ok(Column::BlackLitterman(k.contains(':').then_some(lambda))),
            Ok(scheme) => Ok(Column::Scheme(scheme)),
            Err(e) => Err(CliError::Usage(e.to_string())),
        })
        .collect()
}

/// The aversion for a posterior: the configured one, or the market-calibrated one.
fn posterior_aversion(config: &RunConfig, panel: &ReturnPanel) -> Result<RiskAversion, CliError> {
    let choice = config
        .lambda
        .unwrap_or(AversionChoice::Scenario(AversionSource::Empirical));
    Ok(resolve_aversion(choice, Some((panel, panel.full_range())))?)
}

fn allocate(command: &Command, config: &RunConfig, keys: &[String], constrained: bool) -> Result<(), CliError> {
    let schemes = parse_schemes(keys)?;
    let panel = panel(config)?;
    let caps = caps(config, &panel)?;
    let window = panel.full_range();
    let sigma = estimate(&panel, window, config.estimator)?;
    let mu = mean_excess(&panel, window)?;
    let inputs = AllocationInputs {
        sigma: &sigma,
        mu: &mu,
        panel: &panel,
        window,
        caps: caps.as_ref(),
        constrained,
    };
    let mut run = Run::start(command, config)?;
    let mut columns = Vec::with_capacity(schemes.len());
    for scheme in schemes {
        let weights = match scheme {
            Column::BlackLitterman(lambda) => {
                let aversion = match lambda {
                    None => posterior_aversion(config, &panel)?,
                    Some(l) => RiskAversion::custom(l)?,
                };
                run.lambda = Some(aversion);
                let views = views(config, &panel, STATIC_TAU)?;
                let bl = static_bl_weights(
                    &panel,
                    window,
                    &require_caps(caps.clone())?,
                    Some(&views),
                    config.estimator,
                    aversion,
                )?;
                bl.posterior_weights
            }
            Column::Scheme(other) => allocate_scheme(other, &inputs)?,
        };
        let title = match weights.scheme {
            Scheme::BlackLitterman { .. } => "Black-Litterman".to_string(),
            s => s.title(),
        };
        columns.push((title, weights.weights));
    }
    let table = PercentTable {
        row_names: panel.universe().factor_names(),
        columns,
    };
    run.table("weights.csv", |w| table.write_csv(w))?;
    run.chart(weights_bar_chart(
        &table,
        "Portfolio weights by scheme",
        run.layout.chart("weights.svg"),
    ))?;
    run.finish()
}

fn black_litterman(command: &Command, config: &RunConfig) -> Result<(), CliError> {
    let panel = panel(config)?;
    let caps = require_caps(caps(config, &panel)?)?;
    let window = panel.full_range();
    let views = views(config, &panel, STATIC_TAU)?;
    let names = panel.universe().factor_names();
    let mut run = Run::start(command, config)?;
    let mut weight_columns = Vec::new();
    let mut return_columns = Vec::new();
    for (kind, title) in SCENARIOS {
        let aversion = scenario_aversion(kind, Some((&panel, window)))?;
        let bl = static_bl_weights(&panel, window, &caps, Some(&views), config.estimator, aversion)?;
        weight_columns.push((title.to_string(), bl.posterior_weights.weights));
        return_columns.push((title.to_string(), bl.posterior_mu));
    }
    let weights = PercentTable {
        row_names: names.clone(),
        columns: weight_columns,
    };
    let returns = PercentTable {
        row_names: names.clone(),
        columns: return_columns,
    };
    run.table("bl_scenario_weights.csv", |w| weights.write_csv(w))?;
    run.table("bl_scenario_returns.csv", |w| returns.write_csv(w))?;
    let aversion = posterior_aversion(config, &panel)?;
    run.lambda = Some(aversion);
    let portfolio = static_bl_weights(&panel, window, &caps, Some(&views), config.estimator, aversion)?;
    run.table("bl_portfolio.csv", |w| emit_bl_table(w, &names, &portfolio))?;
    run.chart(weights_bar_chart(
        &weights,
        "Black-Litterman weights by risk aversion",
        run.layout.chart("bl_scenario_weights.svg"),
    ))?;
    run.finish()
}

fn dynamic_aversion(config: &RunConfig) -> Result<RiskAversion, CliError> {
    match config.lambda {
        None => Ok(RiskAversion::custom(DEFAULT_MARKOWITZ_LAMBDA)?),
        Some(AversionChoice::Scenario(AversionSource::Empirical)) => Err(CliError::Usage(
            "dynamic backtests need a fixed aversion; use kelly, average, averse or a number".into(),
        )),
        Some(choice) => Ok(resolve_aversion(choice, None)?),
    }
}

fn write_ledger(run: &mut Run<'_>, stem: &str, ledger: &BacktestLedger) -> Result<(), CliError> {
    run.table(&format!("ledger_{stem}.csv"), |w| ledger.write_csv(w))?;
    let json = ledger.to_json()?;
    run.table(&format!("ledger_{stem}.json"), |w| {
        use std::io::Write;
        w.write_all(json.as_bytes()).map_err(|e| Error::io("<ledger json>", e))
    })?;
    let reports = ledger_report(ledger);
    run.table(&format!("performance_{stem}.json"), |w| {
        write_series_reports(w, &reports)
    })?;
    run.chart(cumulative_chart(
        ledger,
        &format!("Cumulative wealth ({stem})"),
        run.layout.chart(&format!("cumulative_{stem}.svg")),
    ))
}

fn backtest(
    command: &Command,
    config: &RunConfig,
    mode: BacktestMode,
    generator: GeneratorKind,
    unconstrained_bl: bool,
    constrained: bool,
) -> Result<(), CliError> {
    let panel = panel(config)?;
    match mode {
        BacktestMode::Static => {
            let caps = caps(config, &panel)?;
            let aversion = posterior_aversion(config, &panel)?;
            let views = views(config, &panel, STATIC_TAU)?;
            let mut schemes = Scheme::table_order(DEFAULT_MARKOWITZ_LAMBDA);
            if caps.is_none() {
                schemes.retain(|s| *s != Scheme::MarketCap);
            } else {
                schemes.push(Scheme::BlackLitterman {
                    lambda: aversion.lambda,
                });
            }
            let setup = StaticSetup {
                schemes,
                views: Some(&views),
                caps: caps.as_ref(),
                estimator: config.estimator,
                constrained,
            };
            let ledger = run_static(&panel, &setup)?;
            let mut run = Run::start(command, config)?;
            run.lambda = Some(aversion);
            write_ledger(&mut run, "static", &ledger)?;
            run.finish()
        }
        BacktestMode::Contrarian => {
            let ledger = run_contrarian(&panel)?;
            let mut run = Run::start(command, config)?;
            write_ledger(&mut run, "contrarian", &ledger)?;
            run.finish()
        }
        BacktestMode::Dynamic => {
            let aversion = dynamic_aversion(config)?;
            let setup = DynamicSetup {
                model: config.model,
                lambda: aversion.lambda,
                estimator: config.estimator,
                investment: if unconstrained_bl {
                    BlInvestment::Unconstrained
                } else {
                    BlInvestment::Constrained
                },
                ..DynamicSetup::default()
            };
            let view_source: &dyn ViewGenerator = match generator {
                GeneratorKind::Lstm => &LstmViewGenerator,
                GeneratorKind::Momentum => &MomentumViewGenerator,
            };
            let ledger = run_dynamic_bl(&panel, &setup, view_source)?;
            let audit = audit_no_lookahead(&ledger);
            if let Some(bad) = audit.iter().find(|a| !a.passed) {
                return Err(CliError::Core(Error::BadInput(format!(
                    "round {} used data from its own investment window",
                    bad.round
                ))));
            }
            let mut run = Run::start(command, config)?;
            run.lambda = Some(aversion);
            write_ledger(&mut run, "dynamic", &ledger)?;
            run.table("lookahead_audit.json", |w| Ok(serde_json::to_writer_pretty(w, &audit)?))?;
            let round_views: Vec<_> = ledger.rounds.iter().filter_map(|m| m.view).collect();
            run.table("views.json", |w| Ok(serde_json::to_writer_pretty(w, &round_views)?))?;
            let names = ledger.factor_names.clone();
            for path in weight_paths(&ledger) {
                let file = format!("weights_{}.svg", path.series.replace([':', '.'], "_"));
                run.chart(weight_path_chart(&path, &names, run.layout.chart(&file)))?;
            }
            run.finish()
        }
    }
}

fn sweep(
    command: &Command,
    config: &RunConfig,
    prior_key: &str,
    fixed_omega: bool,
    constrained: bool,
) -> Result<(), CliError> {
    let prior_scheme: Scheme = prior_key.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    if matches!(prior_scheme, Scheme::BlackLitterman { .. }) {
        return Err(CliError::Usage(
            "the sweep prior cannot itself be Black-Litterman".into(),
        ));
    }
    let panel = panel(config)?;
    let caps = caps(config, &panel)?;
    let window = panel.full_range();
    let mu = mean_excess(&panel, window)?;
    let aversion = match config.lambda {
        None => RiskAversion::custom(DEFAULT_MARKOWITZ_LAMBDA)?,
        Some(choice) => resolve_aversion(choice, Some((&panel, window)))?,
    };
    let names = panel.universe().factor_names();
    let omega = if fixed_omega {
        OmegaMode::Fixed
    } else {
        OmegaMode::Recompute
    };
    let prior_fn = |sigma: &factorbl_core::CovEstimate| {
        allocate_scheme(
            prior_scheme,
            &AllocationInputs {
                sigma,
                mu: &mu,
                panel: &panel,
                window,
                caps: caps.as_ref(),
                constrained,
            },
        )
    };
    let mut run = Run::start(command, config)?;
    run.lambda = Some(aversion);
    for estimator in [EstimatorChoice::Sample, EstimatorChoice::Shrunk] {
        let label = estimator_label(estimator);
        let sigma = estimate(&panel, window, estimator)?;
        let views = match &config.views {
            Some(path) => {
                let file = ViewFile::load(path)?;
                build_views(&file.view, panel.universe(), &sigma, file.tau.unwrap_or(STATIC_TAU))?
            }
            None => ViewSet::empty(sigma.n(), STATIC_TAU),
        };
        let result = volatility_sweep(
            prior_fn,
            &sigma,
            &views,
            aversion,
            aversion,
            &default_multipliers(),
            omega,
        )?;
        for (side, side_label) in [(SweepSide::Prior, "prior"), (SweepSide::Posterior, "posterior")] {
            let stem = format!("sweep_{label}_{side_label}");
            run.table(&format!("{stem}.csv"), |w| write_sweep_csv(w, &names, &result, side))?;
            run.chart(sweep_chart(
                &result,
                side,
                &names,
                &format!("{side_label} weights vs volatility ({label})"),
                run.layout.chart(&format!("{stem}.svg")),
            ))?;
        }
    }
    let contrast = estimator_contrast(&panel, window, prior_fn)?;
    run.table("estimator_contrast.json", |w| {
        Ok(serde_json::to_writer_pretty(w, &contrast)?)
    })?;
    run.finish()
}

/// Rebalances per year from the calendar span between the first and last distinct dates.
fn infer_periods_per_year(ledger: &BacktestLedger) -> f64 {
    let mut dates: Vec<_> = ledger.records.iter().map(|r| r.date).collect();
    dates.sort();
    dates.dedup();
    match (dates.first(), dates.last()) {
        (Some(first), Some(last)) if dates.len() > 1 && last > first => {
            let days = (*last - *first).num_days() as f64;
            (dates.len() - 1) as f64 * 365.25 / days
        }
        _ => factorbl_core::marketdata::TRADING_DAYS,
    }
}

fn report(command: &Command, config: &RunConfig, path: &Path, periods_per_year: Option<f64>) -> Result<(), CliError> {
    let file =
        std::fs::File::open(path).map_err(|_| CliError::Usage(format!("ledger file not found: {}", path.display())))?;
    let mut ledger = BacktestLedger::read_csv(std::io::BufReader::new(file), 1.0)?;
    ledger.periods_per_year = match periods_per_year {
        Some(p) if p > 0.0 => p,
        Some(p) => return Err(CliError::Usage(format!("periods per year must be positive, got {p}"))),
        None => infer_periods_per_year(&ledger),
    };
    let mut run = Run::start(command, config)?;
    let reports = ledger_report(&ledger);
    run.table("performance.json", |w| write_series_reports(w, &reports))?;
    run.chart(cumulative_chart(
        &ledger,
        "Cumulative wealth",
        run.layout.chart("cumulative.svg"),
    ))?;
    run.finish()
}

fn synth(config: &RunConfig, days: usize, output: &Path) -> Result<(), CliError> {
    if days < 3 {
        return Err(CliError::Usage("synthetic panels need at least 3 days".into()));
    }
    let panel = factorbl_core::synthetic::synthetic_panel(&universe(config)?, days, config.seed);
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(output, factorbl_core::synthetic::prices_csv(&panel)).map_err(|e| Error::io(output, e))?;
    println!("{}", output.display());
    Ok(())
}
