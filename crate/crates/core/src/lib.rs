//! Factor portfolio construction and backtesting.
//!
//! The crate covers the whole pipeline from a panel of daily ETF prices to
//! rebalanced portfolio ledgers:
//!
//! * [`marketdata`] loads and validates the return panel and static market-cap weights.
//! * [`covariance`] estimates sample and constant-correlation shrinkage covariances.
//! * [`allocate`] implements the fixed, closed-form and box/simplex-constrained weight schemes.
//! * [`blacklitterman`] calibrates risk aversion, reverse-optimizes the prior and blends views.
//! * [`viewgen`] builds rolling sequence datasets and trains an LSTM view classifier.
//! * [`backtest`] runs static, dynamic (rolling Black-Litterman) and contrarian backtests.
//! * [`robustness`] produces weight paths and volatility-multiplier sweeps.
//! * [`report`] renders tables and deterministic SVG charts.

// `!(x > 0.0)` guards are written that way so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocate;
pub mod backtest;
pub mod blacklitterman;
pub mod covariance;
pub mod error;
pub mod linalg;
pub mod marketdata;
pub mod report;
pub mod robustness;
pub mod synthetic;
pub mod viewgen;

pub use allocate::{Scheme, SolverReport, WeightVector};
pub use backtest::{BacktestLedger, RebalanceRecord};
pub use blacklitterman::{BlResult, RiskAversion, ViewSet};
pub use covariance::{CovEstimate, Estimator, MomentEstimate};
pub use error::{Error, ErrorClass, Result};
pub use marketdata::{FactorUniverse, MarketCapWeights, ReturnPanel, RowRange};
pub use viewgen::{GeneratedView, ViewModelConfig};
