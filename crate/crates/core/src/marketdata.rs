//! Return panel, factor universe and market-cap inputs.
//!
//! Prices arrive as a wide CSV (`date,<ticker>,...`) of adjusted closes. Rows
//! where any universe ticker is missing are dropped (inner join on dates), then
//! prices become simple returns `P_t / P_{t-1} - 1`. The risk-free series is
//! quoted as an annualized percent yield and is converted to a daily simple
//! rate by dividing by `100 * 252`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_UNIVERSE: &str = include_str!("../data/universe.toml");
const DEFAULT_MARKET_CAPS: &str = include_str!("../data/market_caps.csv");

/// Trading days per year used for annual/daily conversions.
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssetClass {
    EquityUS,
    EquityChina,
    BondUS,
    BondChina,
    Commodity,
    RealEstate,
    Volatility,
    Rate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Factor,
    Benchmark,
    RiskFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseEntry {
    pub id: usize,
    pub ticker: String,
    pub variable_name: String,
    pub asset_class: AssetClass,
    pub role: Role,
}

/// The set of series making up a panel: factors plus exactly one benchmark
/// and one risk-free rate. Entries are kept sorted by `id`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorUniverse {
    entries: Vec<UniverseEntry>,
    factor_positions: Vec<usize>,
    benchmark_position: usize,
    risk_free_position: usize,
}

#[derive(Deserialize)]
struct UniverseFile {
    entry: Vec<UniverseEntry>,
}

impl FactorUniverse {
    pub fn new(mut entries: Vec<UniverseEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        for (expected, entry) in entries.iter().enumerate() {
            if entry.id != expected {
                return Err(Error::BadInput(format!(
                    "universe ids must be unique and contiguous from 0; found {} at position {expected}",
                    entry.id
                )));
            }
        }
        let mut names = HashSet::new();
        let mut tickers = HashSet::new();
        for entry in &entries {
            if !names.insert(entry.variable_name.as_str()) {
                return Err(Error::BadInput(format!(
                    "duplicate variable_name `{}`",
                    entry.variable_name
                )));
            }
            if !tickers.insert(entry.ticker.as_str()) {
                return Err(Error::BadInput(format!("duplicate ticker `{}`", entry.ticker)));
            }
        }
        let positions = |role: Role| -> Vec<usize> {
            entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.role == role)
                .map(|(i, _)| i)
                .collect()
        };
        let benchmark = positions(Role::Benchmark);
        let risk_free = positions(Role::RiskFree);
        if benchmark.len() != 1 || risk_free.len() != 1 {
            return Err(Error::BadInput(format!(
                "universe needs exactly one benchmark and one risk-free entry (found {} and {})",
                benchmark.len(),
                risk_free.len()
            )));
        }
        let factor_positions = positions(Role::Factor);
        if factor_positions.is_empty() {
            return Err(Error::BadInput("universe has no factors".into()));
        }
        Ok(Self {
            entries,
            factor_positions,
            benchmark_position: benchmark[0],
            risk_free_position: risk_free[0],
        })
    }

    /// The 22-series universe: 20 factor ETFs, SPY as benchmark and ^IRX as risk-free.
    pub fn default_universe() -> Self {
        Self::from_toml_str(DEFAULT_UNIVERSE).expect("bundled universe is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: UniverseFile = toml::from_str(text)?;
        Self::new(file.entry)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            entry: &'a [UniverseEntry],
        }
        toml::to_string(&Out { entry: &self.entries }).expect("universe serializes")
    }

    pub fn entries(&self) -> &[UniverseEntry] {
        &self.entries
    }

    /// Number of series (factors + benchmark + risk-free).
    pub fn series_count(&self) -> usize {
        self.entries.len()
    }

    pub fn n_factors(&self) -> usize {
        self.factor_positions.len()
    }

    /// Factor entries in id order. Factor index `i` throughout the crate refers to
    /// the `i`-th element of this iterator.
    pub fn factors(&self) -> impl Iterator<Item = &UniverseEntry> {
        self.factor_positions.iter().map(|&p| &self.entries[p])
    }

    pub fn factor_names(&self) -> Vec<String> {
        self.factors().map(|e| e.variable_name.clone()).collect()
    }

    pub fn factor_index(&self, variable_name: &str) -> Option<usize> {
        self.factors().position(|e| e.variable_name == variable_name)
    }

    pub fn benchmark(&self) -> &UniverseEntry {
        &self.entries[self.benchmark_position]
    }

    pub fn risk_free(&self) -> &UniverseEntry {
        &self.entries[self.risk_free_position]
    }

    /// Panel column holding factor `i`.
    pub fn factor_column(&self, i: usize) -> usize {
        self.factor_positions[i]
    }

    pub fn factor_columns(&self) -> &[usize] {
        &self.factor_positions
    }

    pub fn benchmark_column(&self) -> usize {
        self.benchmark_position
    }

    pub fn risk_free_column(&self) -> usize {
        self.risk_free_position
    }
}

impl Default for FactorUniverse {
    fn default() -> Self {
        Self::default_universe()
    }
}

/// Half-open range of panel rows `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowRange {
    pub start: usize,
    pub end: usize,
}

impl RowRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Date-indexed matrix of simple daily returns, one column per universe entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    returns: DMatrix<f64>,
    universe: FactorUniverse,
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, returns: DMatrix<f64>, universe: FactorUniverse) -> Result<Self> {
        if returns.nrows() != dates.len() {
            return Err(Error::BadInput(format!(
                "{} dates but {} return rows",
                dates.len(),
                returns.nrows()
            )));
        }
        if returns.ncols() != universe.series_count() {
            return Err(Error::UniverseMismatch(format!(
                "panel has {} columns, universe has {} series",
                returns.ncols(),
                universe.series_count()
            )));
        }
        if dates.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: dates.len(),
            });
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::BadInput(format!(
                "dates must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(v) = returns.iter().find(|v| !v.is_finite() || **v <= -1.0) {
            return Err(Error::BadInput(format!(
                "returns must be finite and greater than -1, found {v}"
            )));
        }
        Ok(Self {
            dates,
            returns,
            universe,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// All series, `T x M` in universe order.
    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn universe(&self) -> &FactorUniverse {
        &self.universe
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_factors(&self) -> usize {
        self.universe.n_factors()
    }

    pub fn full_range(&self) -> RowRange {
        RowRange::new(0, self.len())
    }

    pub fn check_range(&self, range: RowRange) -> Result<()> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::BadInput(format!(
                "row range {}..{} outside panel of {} rows",
                range.start,
                range.end,
                self.len()
            )));
        }
        Ok(())
    }

    /// Rows whose dates fall within `[start, end]` inclusive.
    pub fn range_for_dates(&self, start: NaiveDate, end: NaiveDate) -> RowRange {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d <= end);
        RowRange::new(lo, hi.max(lo))
    }

    /// `(first date, last date)` of a non-empty range.
    pub fn date_span(&self, range: RowRange) -> (NaiveDate, NaiveDate) {
        (self.dates[range.start], self.dates[range.end - 1])
    }

    /// Factor returns over `range`, `len x N`.
    pub fn factor_returns(&self, range: RowRange) -> DMatrix<f64> {
        let cols = self.universe.factor_columns();
        DMatrix::from_fn(range.len(), cols.len(), |r, c| self.returns[(range.start + r, cols[c])])
    }

    pub fn factor_return(&self, row: usize, factor: usize) -> f64 {
        self.returns[(row, self.universe.factor_column(factor))]
    }

    pub fn series(&self, column: usize, range: RowRange) -> Vec<f64> {
        (range.start..range.end).map(|r| self.returns[(r, column)]).collect()
    }

    pub fn benchmark_returns(&self, range: RowRange) -> Vec<f64> {
        self.series(self.universe.benchmark_column(), range)
    }

    pub fn risk_free_returns(&self, range: RowRange) -> Vec<f64> {
        self.series(self.universe.risk_free_column(), range)
    }

    /// Per-factor compounded return `prod(1 + r) - 1` over `range`.
    pub fn cumulative_factor_returns(&self, range: RowRange) -> DVector<f64> {
        DVector::from_fn(self.n_factors(), |f, _| {
            (range.start..range.end).fold(1.0, |acc, r| acc * (1.0 + self.factor_return(r, f))) - 1.0
        })
    }

    pub fn cumulative_risk_free(&self, range: RowRange) -> f64 {
        self.risk_free_returns(range).iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0
    }

    /// Writes the panel as `date,<variable_name>,...` with shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.universe.entries().iter().map(|e| e.variable_name.clone()));
        out.write_record(&header)?;
        for (r, date) in self.dates.iter().enumerate() {
            let mut row = vec![date.format("%Y-%m-%d").to_string()];
            row.extend((0..self.returns.ncols()).map(|c| format!("{:?}", self.returns[(r, c)])));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<returns csv>", e))?;
        Ok(())
    }

    /// Reads a returns CSV produced by [`ReturnPanel::write_csv`].
    pub fn read_csv<R: Read>(reader: R, universe: FactorUniverse) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let columns = universe
            .entries()
            .iter()
            .map(|e| {
                headers
                    .iter()
                    .position(|h| h == e.variable_name)
                    .ok_or_else(|| Error::UniverseMismatch(format!("missing column `{}`", e.variable_name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let date_col = date_column(&headers)?;
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record?;
            dates.push(parse_date(&record[date_col])?);
            for &c in &columns {
                values.push(parse_number(&record[c])?);
            }
        }
        let returns = DMatrix::from_row_slice(dates.len(), columns.len(), &values);
        Self::new(dates, returns, universe)
    }
}

fn date_column(headers: &csv::StringRecord) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("date"))
        .ok_or_else(|| Error::BadInput("CSV has no `date` column".into()))
}

fn parse_date(text: &str) -> Result<NaiveDate> {
    let text = text.trim();
    let head = text.get(..10).unwrap_or(text);
    NaiveDate::parse_from_str(head, "%Y-%m-%d").map_err(|e| Error::BadInput(format!("bad date `{text}`: {e}")))
}

fn parse_number(text: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|e| Error::BadInput(format!("bad number `{text}`: {e}")))
}

/// A missing observation: empty, or one of the usual NA spellings.
fn parse_optional(text: &str) -> Result<Option<f64>> {
    let t = text.trim();
    if t.is_empty() || ["nan", "na", "n/a", "null", "none"].contains(&t.to_ascii_lowercase().as_str()) {
        return Ok(None);
    }
    let v = parse_number(t)?;
    Ok(v.is_finite().then_some(v))
}

/// Converts an annualized percent quote (e.g. ^IRX) to a daily simple rate.
pub fn annual_percent_to_daily(quote: f64) -> f64 {
    quote / (100.0 * TRADING_DAYS)
}

/// Loads a wide adjusted-close CSV and converts it to a [`ReturnPanel`].
pub fn load_prices(path: impl AsRef<Path>, universe: FactorUniverse) -> Result<ReturnPanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_prices(file, universe)
}

pub fn parse_prices<R: Read>(reader: R, universe: FactorUniverse) -> Result<ReturnPanel> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let date_col = date_column(&headers)?;
    let columns = universe
        .entries()
        .iter()
        .map(|e| {
            headers
                .iter()
                .position(|h| h.trim() == e.ticker)
                .ok_or_else(|| Error::UniverseMismatch(format!("price file has no column for ticker `{}`", e.ticker)))
        })
        .collect::<Result<Vec<_>>>()?;
    let rf_col = universe.risk_free_column();

    let mut last_date: Option<NaiveDate> = None;
    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for record in rdr.records() {
        let record = record?;
        let date = parse_date(&record[date_col])?;
        if let Some(prev) = last_date {
            if date <= prev {
                return Err(Error::BadInput(format!(
                    "dates must be strictly increasing ({prev} then {date})"
                )));
            }
        }
        last_date = Some(date);
        let mut row = Vec::with_capacity(columns.len());
        for &c in &columns {
            match parse_optional(record.get(c).unwrap_or(""))? {
                Some(v) => row.push(v),
                None => break,
            }
        }
        if row.len() < columns.len() {
            dropped += 1;
            continue;
        }
        for (k, &v) in row.iter().enumerate() {
            if k != rf_col && v <= 0.0 {
                return Err(Error::BadInput(format!(
                    "non-positive price {v} for `{}` on {date}",
                    universe.entries()[k].ticker
                )));
            }
        }
        dates.push(date);
        rows.push(row);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} price rows with missing values");
    }
    if rows.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: rows.len(),
        });
    }

    let t = rows.len() - 1;
    let m = columns.len();
    let returns = DMatrix::from_fn(t, m, |r, c| {
        if c == rf_col {
            annual_percent_to_daily(rows[r + 1][c])
        } else {
            rows[r + 1][c] / rows[r][c] - 1.0
        }
    });
    ReturnPanel::new(dates[1..].to_vec(), returns, universe)
}

/// One row of the summary-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (divisor `n - 1`) sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Count, mean, sample std, min, quartiles and max for every series in the panel.
pub fn summary_stats(panel: &ReturnPanel) -> Vec<SeriesSummary> {
    let range = panel.full_range();
    panel
        .universe()
        .entries()
        .iter()
        .enumerate()
        .map(|(col, entry)| {
            let xs = panel.series(col, range);
            let mut sorted = xs.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            SeriesSummary {
                name: entry.variable_name.clone(),
                count: xs.len(),
                mean: mean(&xs),
                std: sample_variance(&xs).sqrt(),
                min: sorted[0],
                q25: quantile_sorted(&sorted, 0.25),
                q50: quantile_sorted(&sorted, 0.5),
                q75: quantile_sorted(&sorted, 0.75),
                max: sorted[sorted.len() - 1],
            }
        })
        .collect()
}

/// Pearson correlation of the factor columns, `N x N`.
pub fn correlation_matrix(panel: &ReturnPanel) -> Result<DMatrix<f64>> {
    let x = panel.factor_returns(panel.full_range());
    let names = panel.universe().factor_names();
    let t = x.nrows() as f64;
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / t).collect();
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] - means[c]);
    let cross = centered.transpose() * &centered;
    let n = x.ncols();
    for i in 0..n {
        if !(cross[(i, i)] > 0.0) {
            return Err(Error::DegenerateSeries(format!("`{}` has zero variance", names[i])));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (cross[(i, j)] / (cross[(i, i)] * cross[(j, j)]).sqrt()).clamp(-1.0, 1.0)
        }
    }))
}

/// Static market-cap weights over the universe's factors, normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketCapWeights {
    weights: DVector<f64>,
}

impl MarketCapWeights {
    pub fn new(raw: DVector<f64>) -> Result<Self> {
        if let Some(v) = raw.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::BadInput(format!("market cap must be non-negative, got {v}")));
        }
        let total = raw.sum();
        if !(total > 0.0) {
            return Err(Error::BadInput("market caps sum to zero".into()));
        }
        Ok(Self { weights: raw / total })
    }

    /// The hand-collected cap table bundled with the crate (default universe order).
    pub fn bundled() -> Self {
        parse_market_caps(DEFAULT_MARKET_CAPS.as_bytes(), &FactorUniverse::default_universe())
            .expect("bundled market caps are valid")
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }
}

pub fn load_market_caps(path: impl AsRef<Path>, universe: &FactorUniverse) -> Result<MarketCapWeights> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_market_caps(file, universe)
}

pub fn parse_market_caps<R: Read>(reader: R, universe: &FactorUniverse) -> Result<MarketCapWeights> {
    #[derive(Deserialize)]
    struct Row {
        variable_name: String,
        weight: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut raw: Vec<Option<f64>> = vec![None; universe.n_factors()];
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        let i = universe.factor_index(&row.variable_name).ok_or_else(|| {
            Error::UniverseMismatch(format!("`{}` is not a factor in the universe", row.variable_name))
        })?;
        if row.weight < 0.0 {
            return Err(Error::BadInput(format!(
                "negative market cap {} for `{}`",
                row.weight, row.variable_name
            )));
        }
        raw[i] = Some(row.weight);
    }
    let names = universe.factor_names();
    let values = raw
        .iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::UniverseMismatch(format!("no market cap for `{}`", names[i]))))
        .collect::<Result<Vec<_>>>()?;
    MarketCapWeights::new(DVector::from_vec(values))
}
