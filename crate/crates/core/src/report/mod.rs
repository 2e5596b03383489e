//! Tables, charts and run metadata.
//!
//! Output layout under a report root:
//!
//! ```text
//! {root}/tables/*.csv
//! {root}/charts/*.svg
//! {root}/run_meta.json
//! ```

mod svg;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use svg::{render_chart, render_svg, ChartKind, ChartSpec, NamedSeries};

use crate::backtest::{BacktestLedger, SeriesReport};
use crate::blacklitterman::BlResult;
use crate::error::{Error, Result};
use crate::marketdata::SeriesSummary;
use crate::robustness::{SweepSide, VolSweepResult, WeightPath};

/// Column headings of the Black-Litterman comparison table after the factor column.
/// The prior column is titled after the prior's scheme.
pub const BL_TABLE_COLUMNS: [&str; 6] = [
    "Black-Litterman Return",
    "pi",
    "Return Difference",
    "Black-Litterman Weights",
    "Prior Weights",
    "Weights Difference",
];

/// `0.171074` -> `"17.11%"`, `171.0741` -> `"17,107.41%"`.
pub fn format_percent(fraction: f64) -> String {
    let cents = (fraction * 10_000.0).round();
    if cents == 0.0 {
        return "0.00%".into();
    }
    let negative = cents < 0.0;
    let cents = cents.abs() as u128;
    let whole = (cents / 100).to_string();
    let mut grouped = String::with_capacity(whole.len() + whole.len() / 3);
    for (i, ch) in whole.chars().enumerate() {
        if i > 0 && (whole.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    format!("{}{grouped}.{:02}%", if negative { "-" } else { "" }, cents % 100)
}

/// Inverse of [`format_percent`], returning a fraction.
pub fn parse_percent(text: &str) -> Result<f64> {
    let trimmed = text.trim();
    let body = trimmed
        .strip_suffix('%')
        .ok_or_else(|| Error::BadInput(format!("`{text}` is not a percentage")))?;
    body.replace(',', "")
        .parse::<f64>()
        .map(|v| v / 100.0)
        .map_err(|_| Error::BadInput(format!("`{text}` is not a percentage")))
}

fn flush<W: Write>(mut out: csv::Writer<W>, what: &str) -> Result<()> {
    out.flush().map_err(|e| Error::io(what, e))
}

/// One factor row of the Black-Litterman table, as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlTableRow {
    pub factor: String,
    pub bl_return: f64,
    pub pi: f64,
    pub return_difference: f64,
    pub bl_weight: f64,
    pub prior_weight: f64,
    pub weight_difference: f64,
}

/// Posterior against prior, one row per factor, every value as a two-decimal percentage.
pub fn emit_bl_table<W: Write>(writer: W, names: &[String], result: &BlResult) -> Result<()> {
    let n = result.prior_pi.len();
    if names.len() != n {
        return Err(Error::BadInput(format!("{} names for {n} factors", names.len())));
    }
    let mut out = csv::Writer::from_writer(writer);
    let prior_title = result.prior_weights.scheme.title();
    let mut header = vec![String::new()];
    header.extend(BL_TABLE_COLUMNS.iter().map(|c| {
        if *c == "Prior Weights" {
            prior_title.clone()
        } else {
            c.to_string()
        }
    }));
    out.write_record(&header)?;
    let return_diff = result.return_difference();
    let active = result.active_weights();
    for (i, name) in names.iter().enumerate() {
        out.write_record([
            name.clone(),
            format_percent(result.posterior_mu[i]),
            format_percent(result.prior_pi[i]),
            format_percent(return_diff[i]),
            format_percent(result.posterior_weights.weights[i]),
            format_percent(result.prior_weights.weights[i]),
            format_percent(active[i]),
        ])?;
    }
    flush(out, "<bl table>")
}

pub fn parse_bl_table<R: Read>(reader: R) -> Result<Vec<BlTableRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = [
        "Black-Litterman Return",
        "pi",
        "Return Difference",
        "Black-Litterman Weights",
    ];
    if headers.len() != 7 || headers.iter().skip(1).take(4).ne(expected) || &headers[6] != "Weights Difference" {
        return Err(Error::BadInput("not a Black-Litterman table".into()));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(BlTableRow {
                factor: rec[0].to_string(),
                bl_return: parse_percent(&rec[1])?,
                pi: parse_percent(&rec[2])?,
                return_difference: parse_percent(&rec[3])?,
                bl_weight: parse_percent(&rec[4])?,
                prior_weight: parse_percent(&rec[5])?,
                weight_difference: parse_percent(&rec[6])?,
            })
        })
        .collect()
}

/// A factor-by-column table of percentages (weights per scheme, per scenario, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct PercentTable {
    pub row_names: Vec<String>,
    pub columns: Vec<(String, DVector<f64>)>,
}

impl PercentTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        if self.columns.iter().any(|(_, c)| c.len() != self.row_names.len()) {
            return Err(Error::BadInput("table column length does not match its rows".into()));
        }
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.columns.iter().map(|(t, _)| t.clone()));
        out.write_record(&header)?;
        for (i, name) in self.row_names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.columns.iter().map(|(_, c)| format_percent(c[i])));
            out.write_record(&row)?;
        }
        flush(out, "<percent table>")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let titles: Vec<String> = rdr.headers()?.iter().skip(1).map(String::from).collect();
        let mut row_names = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); titles.len()];
        for rec in rdr.records() {
            let rec = rec?;
            row_names.push(rec[0].to_string());
            for (k, column) in values.iter_mut().enumerate() {
                column.push(parse_percent(&rec[k + 1])?);
            }
        }
        Ok(Self {
            row_names,
            columns: titles
                .into_iter()
                .zip(values.into_iter().map(DVector::from_vec))
                .collect(),
        })
    }
}

pub fn write_summary_table<W: Write>(writer: W, stats: &[SeriesSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["series", "count", "mean", "std", "min", "25%", "50%", "75%", "max"])?;
    for s in stats {
        let mut row = vec![s.name.clone(), s.count.to_string()];
        row.extend(
            [s.mean, s.std, s.min, s.q25, s.q50, s.q75, s.max]
                .iter()
                .map(|v| format!("{v:?}")),
        );
        out.write_record(&row)?;
    }
    flush(out, "<summary table>")
}

pub fn write_series_reports<W: Write>(writer: W, reports: &[SeriesReport]) -> Result<()> {
    serde_json::to_writer_pretty(writer, reports)?;
    Ok(())
}

/// `{root}/tables`, `{root}/charts` and `{root}/run_meta.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportLayout {
    pub root: PathBuf,
}

impl ReportLayout {
    pub fn new(base: impl AsRef<Path>, run_id: &str) -> Self {
        Self {
            root: base.as_ref().join(run_id),
        }
    }

    pub fn tables(&self) -> PathBuf {
        self.root.join("tables")
    }

    pub fn charts(&self) -> PathBuf {
        self.root.join("charts")
    }

    pub fn table(&self, name: &str) -> PathBuf {
        self.tables().join(name)
    }

    pub fn chart(&self, name: &str) -> PathBuf {
        self.charts().join(name)
    }

    pub fn meta(&self) -> PathBuf {
        self.root.join("run_meta.json")
    }

    pub fn create(&self) -> Result<()> {
        for dir in [self.tables(), self.charts()] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }

    /// Creates `path` and hands a writer to `fill`.
    pub fn write_with<F>(&self, path: &Path, fill: F) -> Result<()>
    where
        F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
    {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = std::io::BufWriter::new(file);
        fill(&mut writer)?;
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Everything needed to reproduce a run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub command: String,
    pub seed: u64,
    pub estimator: String,
    pub lambda_source: String,
    pub lambda: Option<f64>,
    pub config: serde_json::Value,
    pub artifacts: Vec<String>,
}

impl RunMeta {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn date_labels(dates: &[chrono::NaiveDate]) -> Vec<String> {
    dates.iter().map(|d| d.to_string()).collect()
}

/// Wealth per ledger series; the first point is the starting wealth of 1.
pub fn cumulative_chart(ledger: &BacktestLedger, title: &str, output: PathBuf) -> ChartSpec {
    let series: Vec<NamedSeries> = ledger
        .series()
        .into_iter()
        .map(|s| NamedSeries::new(s.clone(), ledger.wealth(&s)))
        .collect();
    let mut categories = vec!["start".to_string()];
    if let Some(first) = ledger.series().first() {
        categories.extend(ledger.records_for(first).map(|r| r.end_date.to_string()));
    }
    ChartSpec {
        kind: ChartKind::Line,
        title: title.into(),
        x_label: "date".into(),
        y_label: "wealth".into(),
        categories,
        series,
        output,
    }
}

/// Stacked weights of one series over its rebalance dates.
pub fn weight_path_chart(path: &WeightPath, names: &[String], output: PathBuf) -> ChartSpec {
    ChartSpec {
        kind: ChartKind::StackedArea,
        title: format!("{} weights", path.series),
        x_label: "rebalance date".into(),
        y_label: "weight".into(),
        categories: date_labels(&path.dates),
        series: names
            .iter()
            .enumerate()
            .map(|(f, n)| NamedSeries::new(n.clone(), path.factor_series(f)))
            .collect(),
        output,
    }
}

/// Weight of every factor against the multiplier, for one side of a sweep.
pub fn sweep_chart(
    result: &VolSweepResult,
    side: SweepSide,
    names: &[String],
    title: &str,
    output: PathBuf,
) -> ChartSpec {
    let rows = match side {
        SweepSide::Prior => &result.prior_weights,
        SweepSide::Posterior => &result.posterior_weights,
    };
    ChartSpec {
        kind: ChartKind::Line,
        title: title.into(),
        x_label: "volatility multiplier".into(),
        y_label: "weight".into(),
        categories: result.multipliers.iter().map(|m| format!("{m:.3}")).collect(),
        series: names
            .iter()
            .enumerate()
            .map(|(f, n)| NamedSeries::new(n.clone(), rows.iter().map(|w| w[f]).collect()))
            .collect(),
        output,
    }
}

pub fn heatmap_chart(names: &[String], matrix: &DMatrix<f64>, title: &str, output: PathBuf) -> ChartSpec {
    ChartSpec {
        kind: ChartKind::Heatmap,
        title: title.into(),
        x_label: String::new(),
        y_label: String::new(),
        categories: names.to_vec(),
        series: names
            .iter()
            .enumerate()
            .map(|(i, n)| NamedSeries::new(n.clone(), matrix.row(i).iter().copied().collect()))
            .collect(),
        output,
    }
}

pub fn weights_bar_chart(table: &PercentTable, title: &str, output: PathBuf) -> ChartSpec {
    ChartSpec {
        kind: ChartKind::GroupedBar,
        title: title.into(),
        x_label: "factor".into(),
        y_label: "weight".into(),
        categories: table.row_names.clone(),
        series: table
            .columns
            .iter()
            .map(|(t, c)| NamedSeries::new(t.clone(), c.iter().copied().collect()))
            .collect(),
        output,
    }
}
