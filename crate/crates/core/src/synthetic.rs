//! Seeded synthetic market data.
//!
//! Returns follow a simple one-market-factor model with asset-class specific
//! betas and volatilities, which is enough to exercise every pipeline with
//! realistic correlation structure without shipping market data.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::marketdata::{AssetClass, FactorUniverse, ReturnPanel, Role};

/// Weekdays starting at `start` (inclusive when it is a weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn class_profile(class: AssetClass) -> (f64, f64, f64) {
    // (beta to market, idiosyncratic daily vol, daily drift)
    match class {
        AssetClass::EquityUS => (1.0, 0.006, 0.0004),
        AssetClass::EquityChina => (0.6, 0.016, 0.0001),
        AssetClass::BondUS => (-0.15, 0.004, 0.0000),
        AssetClass::BondChina => (0.02, 0.003, 0.0001),
        AssetClass::Commodity => (0.5, 0.012, 0.0003),
        AssetClass::RealEstate => (0.9, 0.008, 0.0002),
        AssetClass::Volatility => (-2.5, 0.025, -0.002),
        AssetClass::Rate => (0.0, 0.0, 0.0),
    }
}

/// A `days`-row panel over `universe` with deterministic content for a given seed.
pub fn synthetic_panel(universe: &FactorUniverse, days: usize, seed: u64) -> ReturnPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0_f64, 1.0).expect("valid normal");
    let market_vol = 0.011;
    let dates = business_days(NaiveDate::from_ymd_opt(2020, 4, 1).expect("valid date"), days);
    let entries = universe.entries();
    // Per-entry tilt so factors within a class are distinguishable.
    let tilts: Vec<f64> = entries
        .iter()
        .map(|_| 0.75 + 0.5 * std_normal.sample(&mut rng).abs().min(1.0))
        .collect();
    let mut values = vec![0.0; days * entries.len()];
    for t in 0..days {
        let market = market_vol * std_normal.sample(&mut rng);
        for (c, entry) in entries.iter().enumerate() {
            let v = match entry.role {
                Role::RiskFree => {
                    let annual_pct = 0.5 + 4.5 * (t as f64 / days.max(1) as f64);
                    annual_pct / (100.0 * 252.0)
                }
                Role::Benchmark => 0.0003 + market + 0.002 * std_normal.sample(&mut rng),
                Role::Factor => {
                    let (beta, idio, drift) = class_profile(entry.asset_class);
                    drift + beta * tilts[c] * market + idio * tilts[c] * std_normal.sample(&mut rng)
                }
            };
            values[t * entries.len() + c] = v.max(-0.5);
        }
    }
    let returns = DMatrix::from_row_slice(days, entries.len(), &values);
    ReturnPanel::new(dates, returns, universe.clone()).expect("synthetic panel is valid")
}

/// Renders a panel back into a wide price CSV (`date,<ticker>,...`) starting from 100.
///
/// The risk-free column is written as an annualized percent quote, so
/// [`crate::marketdata::parse_prices`] recovers the panel's returns. The
/// first CSV row is the base price row and carries the day before `panel.dates()[0]`.
pub fn prices_csv(panel: &ReturnPanel) -> String {
    let universe = panel.universe();
    let rf_col = universe.risk_free_column();
    let mut out = String::from("date");
    for e in universe.entries() {
        out.push(',');
        out.push_str(&e.ticker);
    }
    out.push('\n');
    let m = universe.series_count();
    let mut prices = vec![100.0_f64; m];
    let base_date = panel.dates()[0] - Duration::days(1);
    let write_row = |out: &mut String, date: NaiveDate, prices: &[f64], rf_quote: f64| {
        out.push_str(&date.format("%Y-%m-%d").to_string());
        for (c, p) in prices.iter().enumerate() {
            out.push(',');
            if c == rf_col {
                out.push_str(&format!("{rf_quote:?}"));
            } else {
                out.push_str(&format!("{p:?}"));
            }
        }
        out.push('\n');
    };
    let first_rf = panel.returns()[(0, rf_col)] * 100.0 * 252.0;
    write_row(&mut out, base_date, &prices, first_rf);
    for (t, date) in panel.dates().iter().enumerate() {
        for (c, p) in prices.iter_mut().enumerate() {
            if c != rf_col {
                *p *= 1.0 + panel.returns()[(t, c)];
            }
        }
        let rf = panel.returns()[(t, rf_col)] * 100.0 * 252.0;
        write_row(&mut out, *date, &prices, rf);
    }
    out
}
