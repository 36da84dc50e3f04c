//! Sweep output: CSV rows and a static SVG of mean final averaged loss
//! against η₀.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::surrogate::Strategy;
use crate::sweep::{CellSummary, SweepResult, SweepRow};

pub const CSV_HEADER: [&str; 7] = ["strategy", "eta0", "seed", "t", "avg_loss", "cum_delta", "bound_gap"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv line {line}: {message}")]
    Format { line: u64, message: String },
    #[error("nothing to plot")]
    EmptyPlot,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Floats use Rust's shortest round-trip formatting, so the text is
/// byte-identical for identical values.
pub fn write_csv<W: Write>(result: &SweepResult, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &result.rows {
        w.write_record([
            r.strategy.name().to_string(),
            r.eta0.to_string(),
            r.seed.to_string(),
            r.t.to_string(),
            r.avg_loss.to_string(),
            r.cum_delta.to_string(),
            r.bound_gap.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<(), ReportError> {
    let mut buf = Vec::new();
    write_csv(result, &mut buf)?;
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_csv<R: Read>(input: R) -> Result<SweepResult, ReportError> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(CSV_HEADER) {
        return Err(ReportError::Format { line: 1, message: "unexpected header".to_string() });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |field: &str| ReportError::Format { line, message: format!("invalid {field}") };
        let float = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(CSV_HEADER[i]));
        rows.push(SweepRow {
            strategy: rec[0].parse::<Strategy>().map_err(|_| bad("strategy"))?,
            eta0: float(1)?,
            seed: rec[2].parse().map_err(|_| bad("seed"))?,
            t: rec[3].parse().map_err(|_| bad("t"))?,
            avg_loss: float(4)?,
            cum_delta: float(5)?,
            bound_gap: float(6)?,
        });
    }
    Ok(SweepResult { rows })
}

pub fn load_csv(path: &Path) -> Result<SweepResult, ReportError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_csv(io::BufReader::new(file))
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Maps data to pixel coordinates; x is `log₁₀ η₀`, y is the loss or its
/// `log₁₀` when `log_y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotFrame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub log_y: bool,
}

impl PlotFrame {
    /// Frame around the finite means; log scale when they span more than
    /// a factor of 100 and are all positive.
    pub fn fit(cells: &[CellSummary]) -> Option<PlotFrame> {
        let pts: Vec<(f64, f64)> =
            cells.iter().filter(|c| c.mean.is_finite() && c.eta0 > 0.0).map(|c| (c.eta0.log10(), c.mean)).collect();
        if pts.is_empty() {
            return None;
        }
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| pts.iter().map(sel).fold(init, f);
        let (x_min, x_max) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
        let (lo, hi) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
        let log_y = lo > 0.0 && hi / lo > 100.0;
        let (y_min, y_max) = if log_y { (lo.log10(), hi.log10()) } else { (lo, hi) };
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, b + 0.5) };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        Some(PlotFrame { x_min, x_max, y_min, y_max, log_y })
    }

    pub fn px(&self, eta0: f64) -> f64 {
        let inner = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        MARGIN_LEFT + (eta0.log10() - self.x_min) / (self.x_max - self.x_min) * inner
    }

    pub fn py(&self, loss: f64) -> f64 {
        let inner = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let v = if self.log_y { loss.log10() } else { loss };
        HEIGHT - MARGIN_BOTTOM - (v - self.y_min) / (self.y_max - self.y_min) * inner
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.ceil() as i64, hi.floor() as i64);
    if b - a >= 1 && b - a <= 12 {
        return (a..=b).map(|k| k as f64).collect();
    }
    (0..=4).map(|i| lo + (hi - lo) * f64::from(i) / 4.0).collect()
}

fn fmt_num(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{:.4}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// SVG 1.1 document: one polyline with markers per strategy, axes, ticks
/// and a legend. Failed cells are left out.
pub fn render_svg(summary: &[CellSummary], title: &str) -> Result<String, ReportError> {
    let frame = PlotFrame::fit(summary).ok_or(ReportError::EmptyPlot)?;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        (WIDTH - MARGIN_RIGHT + MARGIN_LEFT) / 2.0, escape(title));
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for k in ticks(frame.x_min, frame.x_max) {
        let x = frame.px(10f64.powf(k));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            y0 + 18.0, fmt_num(10f64.powf(k)));
    }
    for k in ticks(frame.y_min, frame.y_max) {
        let value = if frame.log_y { 10f64.powf(k) } else { k };
        let y = frame.py(value);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 8.0, y + 4.0, fmt_num(value));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">initial learning rate (log scale)</text>"#,
        (x0 + x1) / 2.0, HEIGHT - 15.0);
    let y_label = if frame.log_y { "final averaged loss (log scale)" } else { "final averaged loss" };
    let _ = writeln!(s, r#"<text x="20" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 20 {:.2})">{y_label}</text>"#,
        (y0 + y1) / 2.0, (y0 + y1) / 2.0);

    let mut legend_row = 0;
    for (k, strategy) in Strategy::ALL.into_iter().enumerate() {
        let pts: Vec<(f64, f64)> = summary
            .iter()
            .filter(|c| c.strategy == strategy && c.mean.is_finite() && c.eta0 > 0.0)
            .map(|c| (frame.px(c.eta0), frame.py(c.mean)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(s, r#"<g class="series" id="{}">"#, strategy.name());
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
        for (x, y) in &pts {
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(s, "</g>");
        let ly = MARGIN_TOP + 10.0 + 20.0 * f64::from(legend_row);
        let lx = x1 + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 25.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#, lx + 32.0, ly + 4.0, strategy.name());
        legend_row += 1;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn emit_svg(result: &SweepResult, path: &Path, title: &str) -> Result<(), ReportError> {
    let svg = render_svg(&result.summary(), title)?;
    fs::write(path, svg).map_err(io_err(path))
}
