//! Rolling sequence datasets and one-hot view generation.
//!
//! A sample is an `L × N` block of daily factor returns labelled with the
//! factor that has the highest cumulative return over the following `H` days.
//! Generators turn the most recent `L` days into a single absolute view.

mod lstm;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use lstm::{argmax_lowest, softmax_columns, SequenceModel};

use crate::blacklitterman::ViewSet;
use crate::covariance::CovEstimate;
use crate::error::{Error, Result};
use crate::marketdata::{ReturnPanel, RowRange};

/// Expected excess return attached to every generated view.
pub const VIEW_Q: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewModelConfig {
    /// Days of returns fed to the model (`L`).
    pub sequence_length: usize,
    /// Holding window and label horizon (`H`), also the dataset stride.
    pub window: usize,
    /// Days of training history before the prediction span.
    pub train_span: usize,
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplies raw daily returns before they reach the network.
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for ViewModelConfig {
    fn default() -> Self {
        Self {
            sequence_length: 126,
            window: 10,
            train_span: 504,
            hidden_size: 32,
            epochs: 150,
            learning_rate: 0.05,
            input_scale: 100.0,
            seed: 42,
        }
    }
}

impl ViewModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 || self.window == 0 || self.hidden_size == 0 {
            return Err(Error::BadInput(
                "sequence_length, window and hidden_size must be positive".into(),
            ));
        }
        if self.train_span != 4 * self.sequence_length {
            return Err(Error::BadInput(format!(
                "train_span {} must equal 4 × sequence_length {}",
                self.train_span, self.sequence_length
            )));
        }
        if self.window > self.train_span {
            return Err(Error::BadInput(format!(
                "window {} exceeds train_span {}",
                self.window, self.train_span
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.input_scale > 0.0) {
            return Err(Error::BadInput("learning_rate and input_scale must be positive".into()));
        }
        Ok(())
    }

    /// Rows handed to the dataset builder in one rolling round: the training
    /// span plus one sequence, so the last label ends where prediction starts.
    pub fn training_rows(&self) -> usize {
        self.train_span + self.sequence_length
    }

    /// Samples produced from `span_len` rows.
    pub fn sample_count(&self, span_len: usize) -> usize {
        let needed = self.sequence_length + self.window;
        if span_len < needed {
            0
        } else {
            (span_len - needed) / self.window + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    /// `L × N` daily factor returns.
    pub features: DMatrix<f64>,
    pub label: usize,
    /// Rows whose returns determine the label.
    pub label_rows: RowRange,
}

/// Builds samples starting every `window` rows inside `span`.
pub fn build_dataset(panel: &ReturnPanel, span: RowRange, config: &ViewModelConfig) -> Result<Vec<SequenceSample>> {
    panel.check_range(span)?;
    let (l, h) = (config.sequence_length, config.window);
    if span.len() < l + h || h == 0 || l == 0 {
        return Err(Error::InsufficientData {
            needed: l + h,
            got: span.len(),
        });
    }
    let count = config.sample_count(span.len());
    Ok((0..count)
        .map(|k| {
            let start = span.start + k * h;
            let features = panel.factor_returns(RowRange::new(start, start + l));
            let label_rows = RowRange::new(start + l, start + l + h);
            let label = argmax_lowest(panel.cumulative_factor_returns(label_rows).iter().copied());
            SequenceSample {
                features,
                label,
                label_rows,
            }
        })
        .collect())
}

/// A one-hot absolute view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedView {
    pub factor: usize,
    pub q: f64,
    pub one_hot_row: DVector<f64>,
}

impl GeneratedView {
    pub fn new(factor: usize, n_factors: usize) -> Self {
        let mut one_hot_row = DVector::zeros(n_factors);
        one_hot_row[factor] = 1.0;
        Self {
            factor,
            q: VIEW_Q,
            one_hot_row,
        }
    }

    pub fn to_view_set(&self, sigma: &CovEstimate, tau: f64) -> Result<ViewSet> {
        ViewSet::one_hot(self.factor, self.q, sigma, tau)
    }

    pub fn record(&self, date: NaiveDate) -> ViewRecord {
        ViewRecord {
            date,
            factor: self.factor,
            q: self.q,
        }
    }
}

/// Serialized form of an emitted view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub date: NaiveDate,
    pub factor: usize,
    pub q: f64,
}

/// Fits a fresh model on `samples` with the configured architecture.
pub fn train_sequence_model(samples: &[SequenceSample], config: &ViewModelConfig) -> Result<(SequenceModel, Vec<f64>)> {
    let first = samples.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let n = first.features.ncols();
    let mut model = SequenceModel::init(n, config.hidden_size, n, config.input_scale, config.seed);
    let pairs: Vec<(&DMatrix<f64>, usize)> = samples.iter().map(|s| (&s.features, s.label)).collect();
    let history = model.fit(&pairs, config.epochs, config.learning_rate)?;
    log::debug!(
        "trained on {} samples: loss {:.4} -> {:.4}",
        samples.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok((model, history))
}

pub fn predict_view(model: &SequenceModel, features: &DMatrix<f64>) -> Result<GeneratedView> {
    let factor = model.predict(features)?;
    Ok(GeneratedView::new(factor, model.classes()))
}

/// Factor with the highest cumulative return over the last `sequence_length` rows of `span`.
pub fn momentum_oracle_view(panel: &ReturnPanel, span: RowRange, config: &ViewModelConfig) -> Result<GeneratedView> {
    panel.check_range(span)?;
    let l = config.sequence_length;
    if span.len() < l || l == 0 {
        return Err(Error::InsufficientData {
            needed: l.max(1),
            got: span.len(),
        });
    }
    let trailing = RowRange::new(span.end - l, span.end);
    let factor = argmax_lowest(panel.cumulative_factor_returns(trailing).iter().copied());
    Ok(GeneratedView::new(factor, panel.n_factors()))
}

/// A view together with the newest row whose returns it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewOutcome {
    pub view: GeneratedView,
    /// Last row read by any training label; `None` when nothing was trained.
    pub last_label_row: Option<usize>,
}

/// Source of one view per rolling round.
pub trait ViewGenerator {
    fn name(&self) -> &str;

    /// `training` holds the rows available for fitting; `features` the rows fed to the predictor.
    fn generate(
        &self,
        panel: &ReturnPanel,
        training: RowRange,
        features: RowRange,
        config: &ViewModelConfig,
    ) -> Result<ViewOutcome>;
}

/// Trains a new LSTM every round.
#[derive(Debug, Clone, Copy, Default)]
pub struct LstmViewGenerator;

impl ViewGenerator for LstmViewGenerator {
    fn name(&self) -> &str {
        "lstm"
    }

    fn generate(
        &self,
        panel: &ReturnPanel,
        training: RowRange,
        features: RowRange,
        config: &ViewModelConfig,
    ) -> Result<ViewOutcome> {
        let samples = build_dataset(panel, training, config)?;
        let (model, _) = train_sequence_model(&samples, config)?;
        let view = predict_view(&model, &panel.factor_returns(features))?;
        Ok(ViewOutcome {
            view,
            last_label_row: samples.iter().map(|s| s.label_rows.end - 1).max(),
        })
    }
}

/// Trailing-momentum stand-in for the trained model.
#[derive(Debug, Clone, Copy, Default)]
pub struct MomentumViewGenerator;

impl ViewGenerator for MomentumViewGenerator {
    fn name(&self) -> &str {
        "momentum"
    }

    fn generate(
        &self,
        panel: &ReturnPanel,
        _training: RowRange,
        features: RowRange,
        config: &ViewModelConfig,
    ) -> Result<ViewOutcome> {
        Ok(ViewOutcome {
            view: momentum_oracle_view(panel, features, config)?,
            last_label_row: None,
        })
    }
}
