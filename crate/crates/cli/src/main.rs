//! `factorbl` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use factorbl_core::ErrorClass;
use serde::Serialize;

use crate::config::{RunConfig, SharedArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] factorbl_core::Error),
}

impl CliError {
    /// 1 internal, 2 user input, 3 data.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Data => 3,
                ErrorClass::Internal => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "factorbl",
    version,
    about = "Factor allocation, Black-Litterman blending and backtests"
)]
struct Cli {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktestMode {
    Static,
    Dynamic,
    Contrarian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Train a sequence classifier every round
    Lstm,
    /// Pick the factor with the best trailing return
    Momentum,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Summary statistics, correlation heatmap and cumulative returns
    Stats,
    /// Weights of each allocation scheme over the whole panel
    Allocate {
        /// Comma-separated scheme keys (e.g. equal,gmv,markowitz:2,bl); all schemes when empty
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
        /// Use closed-form solutions instead of the long-only solver
        #[arg(long)]
        unconstrained: bool,
    },
    /// Black-Litterman posterior under the four risk-aversion scenarios
    Bl,
    /// Static, rolling Black-Litterman or contrarian backtest
    Backtest {
        #[arg(long, value_enum, default_value = "static")]
        mode: BacktestMode,
        /// View generator for dynamic mode
        #[arg(long, value_enum, default_value = "lstm")]
        generator: GeneratorKind,
        /// Invest raw posterior weights instead of long-only Markowitz weights on the posterior (dynamic mode)
        #[arg(long)]
        unconstrained_bl: bool,
        /// Closed-form GMV, max-Sharpe and Markowitz weights (static mode)
        #[arg(long)]
        unconstrained: bool,
    },
    /// Prior and posterior weights as the covariance is scaled, for both estimators
    Sweep {
        /// Scheme that produces the prior weights at each multiplier
        #[arg(long, default_value = "markowitz")]
        prior: String,
        /// Keep the view variances of the unscaled covariance
        #[arg(long)]
        fixed_omega: bool,
        /// Closed-form prior weights instead of the long-only solver
        #[arg(long)]
        unconstrained: bool,
    },
    /// Performance table and chart for an existing ledger CSV
    Report {
        /// Ledger CSV written by `backtest`
        #[arg(long, value_name = "PATH")]
        ledger: PathBuf,
        /// Rebalances per year; inferred from the ledger dates when absent
        #[arg(long)]
        periods_per_year: Option<f64>,
    },
    /// Write a deterministic synthetic price file for the configured universe
    Synth {
        #[arg(long, default_value_t = 800)]
        days: usize,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = RunConfig::resolve(cli.shared)?;
    commands::execute(&cli.command, &config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
