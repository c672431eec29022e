//! Report files: `report.csv` with one row per pair and a final summary row,
//! and `cumulative_error.svg` plotting the cumulative error curve.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ErrorReport;
use crate::error::{Error, Result};

const HEADER: &str = "pair,mean_error,normalized_percent,disconnected,worst_pair_error";

/// Per-pair rows and aggregates as stored in the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    /// `(name, mean error, normalized mean in percent, disconnected points)`.
    pub pairs: Vec<(String, f64, f64, usize)>,
    pub ae: f64,
    pub we: f64,
    pub normalized_mean_percent: f64,
}

impl From<&ErrorReport> for ReportSummary {
    fn from(r: &ErrorReport) -> Self {
        Self {
            pairs: r
                .pairs
                .iter()
                .map(|p| (p.name.clone(), p.mean, 100.0 * p.normalized_mean(), p.disconnected))
                .collect(),
            ae: r.ae,
            we: r.we,
            normalized_mean_percent: r.normalized_mean_percent,
        }
    }
}

fn csv_text(s: &ReportSummary) -> String {
    let mut out = format!("{HEADER}\n");
    for (name, mean, norm, disc) in &s.pairs {
        let _ = writeln!(out, "{name},{mean},{norm},{disc},");
    }
    let disc: usize = s.pairs.iter().map(|p| p.3).sum();
    let _ = writeln!(out, "summary,{},{},{disc},{}", s.ae, s.normalized_mean_percent, s.we);
    out
}

fn svg_text(r: &ErrorReport) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let xmax = r.curve.last().map_or(0.0, |c| c.0).max(1e-12);
    let px = |e: f64| m + (w - 2.0 * m) * e / xmax;
    let py = |f: f64| h - m - (h - 2.0 * m) * f;
    let mut pts = format!("{:.2},{:.2}", px(0.0), py(0.0));
    let mut prev = 0.0;
    for &(e, f) in &r.curve {
        let _ = write!(pts, " {:.2},{:.2} {:.2},{:.2}", px(e), py(prev), px(e), py(f));
        prev = f;
    }
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{m}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{y0}\" x2=\"{m}\" y2=\"{m}\" stroke=\"black\"/>\n\
         <polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{pts}\"/>\n",
        y0 = h - m,
        x1 = w - m,
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">error (max {xmax:.4})</text>",
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">% of points</text>",
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(svg, "<text x=\"{m}\" y=\"{}\" font-size=\"11\">100</text>", m - 4.0);
    svg.push_str("</svg>\n");
    svg
}

/// Writes `report.csv` and `cumulative_error.svg` into `dir` and returns
/// their paths.
pub fn emit_report(report: &ErrorReport, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("report.csv");
    std::fs::write(&csv, csv_text(&ReportSummary::from(report))).map_err(|e| Error::io(&csv, e))?;
    let svg = dir.join("cumulative_error.svg");
    std::fs::write(&svg, svg_text(report)).map_err(|e| Error::io(&svg, e))?;
    Ok((csv, svg))
}

pub fn parse_report_csv(path: impl AsRef<Path>) -> Result<ReportSummary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::parse("report", "missing header"));
    }
    let mut pairs = Vec::new();
    let bad = |n: usize, m: String| Error::parse("report", format!("row {n}: {m}"));
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n + 1, "expected 5 fields".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(n + 1, e.to_string()));
        if f[0] == "summary" {
            return Ok(ReportSummary {
                pairs,
                ae: num(f[1])?,
                we: num(f[4])?,
                normalized_mean_percent: num(f[2])?,
            });
        }
        let disc = f[3].parse::<usize>().map_err(|e| bad(n + 1, e.to_string()))?;
        pairs.push((f[0].to_string(), num(f[1])?, num(f[2])?, disc));
    }
    Err(Error::parse("report", "missing summary row"))
}
