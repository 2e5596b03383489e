//! Deterministic SVG charts.
//!
//! Coordinates are printed with two decimals and nothing time- or
//! environment-dependent is embedded, so identical specs give identical bytes.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;

const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Line,
    StackedArea,
    Heatmap,
    GroupedBar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSeries {
    pub name: String,
    pub values: Vec<f64>,
}

impl NamedSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// What to draw and where.
///
/// `categories` label the x positions (dates, factors, or heatmap columns).
/// For heatmaps each series is one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<NamedSeries>,
    pub output: PathBuf,
}

impl ChartSpec {
    pub fn validate(&self) -> Result<usize> {
        let first = self.series.first().ok_or(Error::EmptyChart)?;
        let len = first.values.len();
        if len == 0 {
            return Err(Error::EmptyChart);
        }
        if self.series.iter().any(|s| s.values.len() != len) {
            return Err(Error::BadInput(format!(
                "chart `{}` has series of unequal length",
                self.title
            )));
        }
        if !self.categories.is_empty() && self.categories.len() != len {
            return Err(Error::BadInput(format!(
                "chart `{}` has {} categories for {len} points",
                self.title,
                self.categories.len()
            )));
        }
        if self.series.iter().flat_map(|s| &s.values).any(|v| !v.is_finite()) {
            return Err(Error::BadInput(format!(
                "chart `{}` contains non-finite values",
                self.title
            )));
        }
        Ok(len)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Maps data values onto the plot's vertical pixel range.
struct YScale {
    lo: f64,
    hi: f64,
}

impl YScale {
    fn new(lo: f64, hi: f64) -> Self {
        if hi - lo > 1e-300 {
            Self { lo, hi }
        } else {
            let pad = lo.abs().max(1.0) * 0.5;
            Self {
                lo: lo - pad,
                hi: hi + pad,
            }
        }
    }

    fn px(&self, v: f64) -> f64 {
        TOP + (HEIGHT - TOP - BOTTOM) * (self.hi - v) / (self.hi - self.lo)
    }
}

fn x_px(i: usize, len: usize) -> f64 {
    let span = WIDTH - LEFT - RIGHT;
    if len <= 1 {
        LEFT + span / 2.0
    } else {
        LEFT + span * i as f64 / (len - 1) as f64
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn header(out: &mut String, spec: &ChartSpec) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="25" text-anchor="middle" font-size="15">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        HEIGHT - 15.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(&spec.y_label)
    );
}

fn y_axis(out: &mut String, scale: &YScale) {
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{LEFT:.2}" y1="{TOP:.2}" x2="{LEFT:.2}" y2="{:.2}" stroke="black"/>"#,
        HEIGHT - BOTTOM
    );
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{LEFT:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM
    );
    for k in 0..=4 {
        let v = scale.lo + (scale.hi - scale.lo) * k as f64 / 4.0;
        let y = scale.px(v);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            WIDTH - RIGHT
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            tick_label(v)
        );
    }
}

fn x_labels(out: &mut String, categories: &[String], positions: &[f64]) {
    if categories.is_empty() {
        return;
    }
    let step = categories.len().div_ceil(12).max(1);
    for (i, (label, x)) in categories.iter().zip(positions).enumerate() {
        if i % step != 0 {
            continue;
        }
        let y = HEIGHT - BOTTOM + 14.0;
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="end" transform="rotate(-35 {x:.2} {y:.2})">{}</text>"#,
            escape(label)
        );
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            color(i)
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 14.0, escape(name));
    }
}

fn points(xs: &[f64], ys: &[f64]) -> String {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn line_chart(out: &mut String, spec: &ChartSpec, len: usize) {
    let all = spec.series.iter().flat_map(|s| s.values.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let scale = YScale::new(lo, hi);
    y_axis(out, &scale);
    let xs: Vec<f64> = (0..len).map(|i| x_px(i, len)).collect();
    for (i, s) in spec.series.iter().enumerate() {
        let ys: Vec<f64> = s.values.iter().map(|v| scale.px(*v)).collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(i),
            points(&xs, &ys)
        );
    }
    x_labels(out, &spec.categories, &xs);
    legend(out, &spec.series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
}

fn stacked_area(out: &mut String, spec: &ChartSpec, len: usize) {
    let mut tops = Vec::with_capacity(spec.series.len());
    let mut running = vec![0.0; len];
    for s in &spec.series {
        for (acc, v) in running.iter_mut().zip(&s.values) {
            *acc += v;
        }
        tops.push(running.clone());
    }
    let all = tops.iter().flatten().copied().chain(std::iter::once(0.0));
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let scale = YScale::new(lo, hi);
    y_axis(out, &scale);
    let xs: Vec<f64> = (0..len).map(|i| x_px(i, len)).collect();
    let mut bottom = vec![0.0; len];
    for (i, top) in tops.iter().enumerate() {
        let mut d = String::new();
        for (k, (x, v)) in xs.iter().zip(top).enumerate() {
            let _ = write!(d, "{}{x:.2},{:.2} ", if k == 0 { "M" } else { "L" }, scale.px(*v));
        }
        for (x, v) in xs.iter().zip(&bottom).rev() {
            let _ = write!(d, "L{x:.2},{:.2} ", scale.px(*v));
        }
        d.push('Z');
        let _ = writeln!(
            out,
            r#"<path class="layer" fill="{}" fill-opacity="0.85" stroke="none" d="{d}"/>"#,
            color(i)
        );
        bottom.clone_from(top);
    }
    let envelope: Vec<f64> = bottom.iter().map(|v| scale.px(*v)).collect();
    let _ = writeln!(
        out,
        r#"<polyline class="envelope" fill="none" stroke="black" stroke-width="1" points="{}"/>"#,
        points(&xs, &envelope)
    );
    x_labels(out, &spec.categories, &xs);
    legend(out, &spec.series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
}

fn heat_color(v: f64, bound: f64) -> String {
    let t = if bound > 0.0 { (v / bound).clamp(-1.0, 1.0) } else { 0.0 };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn heatmap(out: &mut String, spec: &ChartSpec, len: usize) {
    let rows = spec.series.len();
    let bound = spec
        .series
        .iter()
        .flat_map(|s| s.values.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let cell_w = (WIDTH - LEFT - RIGHT) / len as f64;
    let cell_h = (HEIGHT - TOP - BOTTOM) / rows as f64;
    for (r, s) in spec.series.iter().enumerate() {
        let y = TOP + cell_h * r as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 4.0,
            y + cell_h / 2.0 + 4.0,
            escape(&s.name)
        );
        for (c, v) in s.values.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{:.2}" y="{y:.2}" width="{cell_w:.2}" height="{cell_h:.2}" fill="{}"><title>{:.4}</title></rect>"#,
                LEFT + cell_w * c as f64,
                heat_color(*v, bound),
                v
            );
        }
    }
    let centers: Vec<f64> = (0..len).map(|c| LEFT + cell_w * (c as f64 + 0.5)).collect();
    x_labels(out, &spec.categories, &centers);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}">scale ±{}</text>"#,
        WIDTH - RIGHT + 12.0,
        TOP,
        tick_label(bound)
    );
}

fn grouped_bar(out: &mut String, spec: &ChartSpec, len: usize) {
    let all = spec
        .series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .chain(std::iter::once(0.0));
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let scale = YScale::new(lo, hi);
    y_axis(out, &scale);
    let group_w = (WIDTH - LEFT - RIGHT) / len as f64;
    let bar_w = group_w * 0.8 / spec.series.len() as f64;
    let zero = scale.px(0.0);
    for (i, s) in spec.series.iter().enumerate() {
        for (g, v) in s.values.iter().enumerate() {
            let x = LEFT + group_w * g as f64 + group_w * 0.1 + bar_w * i as f64;
            let y = scale.px(*v);
            let _ = writeln!(
                out,
                r#"<rect class="bar" x="{x:.2}" y="{:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"/>"#,
                y.min(zero),
                (y - zero).abs(),
                color(i)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT:.2}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    let centers: Vec<f64> = (0..len).map(|g| LEFT + group_w * (g as f64 + 0.5)).collect();
    x_labels(out, &spec.categories, &centers);
    legend(out, &spec.series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
}

/// SVG document for `spec`.
pub fn render_svg(spec: &ChartSpec) -> Result<String> {
    let len = spec.validate()?;
    let mut out = String::new();
    header(&mut out, spec);
    match spec.kind {
        ChartKind::Line => line_chart(&mut out, spec, len),
        ChartKind::StackedArea => stacked_area(&mut out, spec, len),
        ChartKind::Heatmap => heatmap(&mut out, spec, len),
        ChartKind::GroupedBar => grouped_bar(&mut out, spec, len),
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Renders `spec` to `spec.output`, creating parent directories.
pub fn render_chart(spec: &ChartSpec) -> Result<()> {
    let svg = render_svg(spec)?;
    if let Some(parent) = spec.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&spec.output, svg).map_err(|e| Error::io(&spec.output, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ChartKind, series: Vec<NamedSeries>) -> ChartSpec {
        ChartSpec {
            kind,
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            categories: Vec::new(),
            series,
            output: PathBuf::from("unused.svg"),
        }
    }

    #[test]
    fn empty_series_is_an_error() {
        assert!(matches!(
            render_svg(&spec(ChartKind::Line, vec![])),
            Err(Error::EmptyChart)
        ));
        let ragged = spec(
            ChartKind::Line,
            vec![NamedSeries::new("a", vec![1.0]), NamedSeries::new("b", vec![1.0, 2.0])],
        );
        assert!(matches!(render_svg(&ragged), Err(Error::BadInput(_))));
    }

    #[test]
    fn every_kind_renders_deterministically() {
        let series = vec![
            NamedSeries::new("a & b", vec![0.1, -0.2, 0.3]),
            NamedSeries::new("c", vec![0.5, 0.5, 0.5]),
        ];
        for kind in [
            ChartKind::Line,
            ChartKind::StackedArea,
            ChartKind::Heatmap,
            ChartKind::GroupedBar,
        ] {
            let s = spec(kind, series.clone());
            let a = render_svg(&s).unwrap();
            assert_eq!(a, render_svg(&s).unwrap());
            assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
            assert!(a.contains("a &amp; b"));
        }
    }

    #[test]
    fn flat_series_gets_a_range() {
        let s = spec(ChartKind::Line, vec![NamedSeries::new("a", vec![2.0, 2.0])]);
        let svg = render_svg(&s).unwrap();
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn writes_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(ChartKind::Line, vec![NamedSeries::new("a", vec![1.0, 2.0])]);
        s.output = dir.path().join("nested/chart.svg");
        render_chart(&s).unwrap();
        assert!(s.output.exists());
    }
}
