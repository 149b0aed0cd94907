//! Minimal line charts rendered straight to SVG text.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// A dashed horizontal reference line.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    pub label: String,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub baselines: Vec<Baseline>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

impl Chart {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        for b in &self.baselines {
            y0 = y0.min(b.y);
            y1 = y1.max(b.y);
        }
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let pad = 0.05 * (y1 - y0);
        (x0, x1, y0.min(0.0f64.max(y0 - pad)), y1 + pad)
    }

    /// Renders the chart; `meta` is embedded as an SVG comment.
    pub fn to_svg(&self, meta: Option<&str>) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        if let Some(m) = meta {
            let _ = writeln!(s, "<!-- {} -->", escape(m).replace("--", "- -"));
        }
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        for t in nice_ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP,
                TOP + ph,
                TOP + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in nice_ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        let mut legend_y = TOP + 8.0;
        for b in &self.baselines {
            let y = sy(b.y);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#555" stroke-dasharray="6 4"/>"##,
                LEFT + pw
            );
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" y1="{legend_y:.1}" x2="{:.1}" y2="{legend_y:.1}" stroke="#555" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.1}">{}</text>"##,
                W - RIGHT + 10.0,
                W - RIGHT + 34.0,
                W - RIGHT + 40.0,
                legend_y + 4.0,
                escape(&b.label)
            );
            legend_y += 18.0;
        }
        for (i, ser) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = ser
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{legend_y:.1}" x2="{:.1}" y2="{legend_y:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                W - RIGHT + 10.0,
                W - RIGHT + 34.0,
                W - RIGHT + 40.0,
                legend_y + 4.0,
                escape(&ser.name)
            );
            legend_y += 18.0;
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, path: &Path, meta: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_svg(meta))?;
        Ok(())
    }
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// One row of a summary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub agg_prob: f64,
    pub entropy: f64,
    pub kld: f64,
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
    if rows.is_empty() {
        return Err(LabError::invalid(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

/// The five standard charts (file stem, chart) for one or more named runs.
/// `ell` adds the guessing baselines `1/ℓ` (accuracy) and `ln ℓ` (entropy, loss).
pub fn trace_charts(runs: &[(String, Vec<SummaryRow>)], ell: Option<usize>) -> Vec<(&'static str, Chart)> {
    type Pick = fn(&SummaryRow) -> f64;
    let specs: [(&'static str, &str, &str, Pick); 5] = [
        ("accuracy", "Accuracy", "accuracy", |r| r.accuracy),
        ("loss", "Loss", "loss (nats)", |r| r.loss),
        ("agg_prob", "Aggregate alphabet probability", "probability", |r| r.agg_prob),
        ("entropy", "Alphabet entropy", "entropy (nats)", |r| r.entropy),
        ("kld", "KL divergence from the sampling distribution", "KLD (nats)", |r| r.kld),
    ];
    specs
        .iter()
        .map(|&(stem, title, ylab, pick)| {
            let baselines = match (stem, ell) {
                ("accuracy", Some(l)) => vec![Baseline {
                    label: format!("1/ℓ = {:.4}", 1.0 / l as f64),
                    y: 1.0 / l as f64,
                }],
                ("entropy" | "loss", Some(l)) => vec![Baseline {
                    label: format!("ln ℓ = {:.4}", (l as f64).ln()),
                    y: (l as f64).ln(),
                }],
                _ => Vec::new(),
            };
            let chart = Chart {
                title: title.into(),
                x_label: "epoch".into(),
                y_label: ylab.into(),
                series: runs
                    .iter()
                    .map(|(name, rows)| Series {
                        name: name.clone(),
                        points: rows.iter().map(|r| (r.epoch as f64, pick(r))).collect(),
                    })
                    .collect(),
                baselines,
            };
            (stem, chart)
        })
        .collect()
}
