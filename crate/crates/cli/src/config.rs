//! Run configuration: a flat TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use factorbl_core::blacklitterman::AversionChoice;
use factorbl_core::covariance::EstimatorChoice;
use factorbl_core::ViewModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_OUT: &str = "reports";

/// Flags shared by every subcommand. Each one overrides the same key in `--config`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SharedArgs {
    /// Flat TOML file whose keys match these flag names
    #[arg(long, global = true, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Universe definition (TOML); the bundled 20-factor universe by default
    #[arg(long, global = true, value_name = "PATH")]
    pub universe: Option<PathBuf>,
    /// Wide price CSV: a date column plus one column per ticker
    #[arg(long, global = true, value_name = "PATH")]
    pub prices: Option<PathBuf>,
    /// Market-cap weights CSV (variable_name,weight); the bundled table by default
    #[arg(long, global = true, value_name = "PATH")]
    pub caps: Option<PathBuf>,
    /// View specification file (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    pub views: Option<PathBuf>,
    /// Risk aversion: kelly, average, averse, empirical or a positive number
    #[arg(long, global = true, value_name = "LAMBDA")]
    pub lambda: Option<String>,
    /// Covariance estimator: sample or shrunk
    #[arg(long, global = true, value_name = "NAME")]
    pub estimator: Option<String>,
    /// Seed for every random component [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory that receives `{run_id}/` report folders [default: reports]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Sequence length fed to the view model [default: 126]
    #[arg(long, global = true)]
    pub sequence_length: Option<usize>,
    /// Holding window and label horizon in trading days [default: 10]
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Training span in trading days [default: 504]
    #[arg(long, global = true)]
    pub train_span: Option<usize>,
    /// Hidden units of the view model [default: 32]
    #[arg(long, global = true)]
    pub hidden_size: Option<usize>,
    /// Training epochs per round [default: 150]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Gradient-descent step size [default: 0.05]
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    /// Factor applied to daily returns before they reach the model [default: 100]
    #[arg(long, global = true)]
    pub input_scale: Option<f64>,
}

impl SharedArgs {
    /// Fills every unset field from `base`.
    fn or(self, base: SharedArgs) -> SharedArgs {
        SharedArgs {
            config: self.config,
            universe: self.universe.or(base.universe),
            prices: self.prices.or(base.prices),
            caps: self.caps.or(base.caps),
            views: self.views.or(base.views),
            lambda: self.lambda.or(base.lambda),
            estimator: self.estimator.or(base.estimator),
            seed: self.seed.or(base.seed),
            out: self.out.or(base.out),
            sequence_length: self.sequence_length.or(base.sequence_length),
            window: self.window.or(base.window),
            train_span: self.train_span.or(base.train_span),
            hidden_size: self.hidden_size.or(base.hidden_size),
            epochs: self.epochs.or(base.epochs),
            learning_rate: self.learning_rate.or(base.learning_rate),
            input_scale: self.input_scale.or(base.input_scale),
        }
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub universe: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub caps: Option<PathBuf>,
    pub views: Option<PathBuf>,
    /// `None` lets each command pick its default aversion.
    pub lambda: Option<AversionChoice>,
    pub estimator: EstimatorChoice,
    pub model: ViewModelConfig,
    pub out: PathBuf,
    pub seed: u64,
}

fn check_exists(path: &Option<PathBuf>, what: &str) -> Result<(), CliError> {
    match path {
        Some(p) if !p.exists() => Err(CliError::Usage(format!("{what} file not found: {}", p.display()))),
        _ => Ok(()),
    }
}

fn relative_to(base: &Path, path: Option<PathBuf>) -> Option<PathBuf> {
    path.map(|p| if p.is_relative() { base.join(p) } else { p })
}

impl RunConfig {
    /// Reads `--config` if given, overlays the flags, and checks referenced paths.
    ///
    /// Relative paths inside a config file are taken relative to that file.
    pub fn resolve(flags: SharedArgs) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|_| CliError::Usage(format!("config file not found: {}", path.display())))?;
                let mut parsed: SharedArgs =
                    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
                parsed.universe = relative_to(&base, parsed.universe);
                parsed.prices = relative_to(&base, parsed.prices);
                parsed.caps = relative_to(&base, parsed.caps);
                parsed.views = relative_to(&base, parsed.views);
                parsed
            }
            None => SharedArgs::default(),
        };
        let merged = flags.or(file);
        let defaults = ViewModelConfig::default();
        let seed = merged.seed.unwrap_or(DEFAULT_SEED);
        let model = ViewModelConfig {
            sequence_length: merged.sequence_length.unwrap_or(defaults.sequence_length),
            window: merged.window.unwrap_or(defaults.window),
            train_span: merged.train_span.unwrap_or(defaults.train_span),
            hidden_size: merged.hidden_size.unwrap_or(defaults.hidden_size),
            epochs: merged.epochs.unwrap_or(defaults.epochs),
            learning_rate: merged.learning_rate.unwrap_or(defaults.learning_rate),
            input_scale: merged.input_scale.unwrap_or(defaults.input_scale),
            seed,
        };
        let lambda = merged
            .lambda
            .as_deref()
            .map(str::parse::<AversionChoice>)
            .transpose()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let estimator = match merged.estimator.as_deref() {
            None => EstimatorChoice::Sample,
            Some(s) => s
                .parse()
                .map_err(|e: factorbl_core::Error| CliError::Usage(e.to_string()))?,
        };
        check_exists(&merged.universe, "universe")?;
        check_exists(&merged.prices, "prices")?;
        check_exists(&merged.caps, "market-cap")?;
        check_exists(&merged.views, "views")?;
        Ok(Self {
            universe: merged.universe,
            prices: merged.prices,
            caps: merged.caps,
            views: merged.views,
            lambda,
            estimator,
            model,
            out: merged.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            seed,
        })
    }

    pub fn require_prices(&self) -> Result<&Path, CliError> {
        self.prices
            .as_deref()
            .ok_or_else(|| CliError::Usage("no price file given (use --prices or the `prices` config key)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "seed = 7\nlambda = \"averse\"\nepochs = 3\n").unwrap();
        let flags = SharedArgs {
            config: Some(cfg),
            seed: Some(9),
            ..SharedArgs::default()
        };
        let resolved = RunConfig::resolve(flags).unwrap();
        assert_eq!(resolved.seed, 9);
        assert_eq!(resolved.model.epochs, 3);
        assert_eq!(resolved.model.seed, 9);
        assert!(matches!(resolved.lambda, Some(AversionChoice::Scenario(_))));
    }

    #[test]
    fn unknown_keys_and_missing_paths_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "colour = 1\n").unwrap();
        let flags = SharedArgs {
            config: Some(cfg),
            ..SharedArgs::default()
        };
        assert!(matches!(RunConfig::resolve(flags), Err(CliError::Usage(_))));
        let flags = SharedArgs {
            prices: Some(dir.path().join("nope.csv")),
            ..SharedArgs::default()
        };
        match RunConfig::resolve(flags) {
            Err(CliError::Usage(msg)) => assert!(msg.contains("nope.csv")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults() {
        let resolved = RunConfig::resolve(SharedArgs::default()).unwrap();
        assert_eq!(resolved.seed, 42);
        assert_eq!(resolved.out, PathBuf::from("reports"));
        assert_eq!(resolved.estimator, EstimatorChoice::Sample);
        assert_eq!(resolved.lambda, None);
    }
}
