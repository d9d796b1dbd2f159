//! Trace and bound CSVs and log-scale SVG overlays.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

use emflows::algorithms::{IterateRecord, Trace};
use emflows::bounds::BoundCurve;

/// 17 significant digits, enough to round-trip any f64.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_header(d_theta: usize, d_x: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend((0..d_theta).map(|i| format!("theta_{i}")));
    cols.extend((0..d_x).map(|i| format!("law_mean_{i}")));
    for i in 0..d_x {
        cols.extend((0..d_x).map(|j| format!("law_cov_{i}_{j}")));
    }
    cols.extend(["gap", "fisher", "dist", "wall_nanos"].map(String::from));
    cols.join(",")
}

fn record_row(r: &IterateRecord<f64>, timing: bool) -> String {
    let mut cols = vec![r.k.to_string()];
    cols.extend(r.theta.iter().map(|v| num(*v)));
    cols.extend(r.law.mean.iter().map(|v| num(*v)));
    let d = r.law.mean.len();
    for i in 0..d {
        cols.extend((0..d).map(|j| num(r.law.cov[(i, j)])));
    }
    cols.push(num(r.gap));
    cols.push(num(r.fisher));
    cols.push(r.distance.map(num).unwrap_or_default());
    cols.push(if timing { r.wall_nanos } else { 0 }.to_string());
    cols.join(",")
}

pub fn trace_csv(trace: &Trace<f64>, timing: bool) -> String {
    let first = &trace.records[0];
    let mut out = trace_header(first.theta.len(), first.law.mean.len());
    out.push('\n');
    for r in &trace.records {
        out.push_str(&record_row(r, timing));
        out.push('\n');
    }
    out
}

/// One parsed row of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub theta: Vec<f64>,
    pub law_mean: Vec<f64>,
    pub law_cov: Vec<f64>,
    pub gap: f64,
    pub fisher: f64,
    pub dist: Option<f64>,
    pub wall_nanos: u64,
}

impl TraceRow {
    pub fn from_record(r: &IterateRecord<f64>) -> Self {
        Self {
            k: r.k,
            theta: r.theta.iter().copied().collect(),
            law_mean: r.law.mean.iter().copied().collect(),
            law_cov: r.law.cov.transpose().iter().copied().collect(),
            gap: r.gap,
            fisher: r.fisher,
            dist: r.distance,
            wall_nanos: r.wall_nanos,
        }
    }
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().context("empty trace.csv")?.split(',').collect();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (dt, dx, dc) = (count("theta_"), count("law_mean_"), count("law_cov_"));
    if dc != dx * dx || header.len() != 1 + dt + dx + dc + 4 {
        bail!("unexpected trace.csv header");
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                bail!("row {i}: expected {} fields, got {}", header.len(), f.len());
            }
            let float = |s: &str| s.parse::<f64>().with_context(|| format!("row {i}: bad number `{s}`"));
            let floats = |a: usize, n: usize| f[a..a + n].iter().map(|s| float(s)).collect::<Result<Vec<_>>>();
            let base = 1 + dt + dx + dc;
            Ok(TraceRow {
                k: f[0].parse().with_context(|| format!("row {i}: bad k"))?,
                theta: floats(1, dt)?,
                law_mean: floats(1 + dt, dx)?,
                law_cov: floats(1 + dt + dx, dc)?,
                gap: float(f[base])?,
                fisher: float(f[base + 1])?,
                dist: if f[base + 2].is_empty() { None } else { Some(float(f[base + 2])?) },
                wall_nanos: f[base + 3].parse().with_context(|| format!("row {i}: bad wall_nanos"))?,
            })
        })
        .collect()
}

pub fn curve_label(name: &str, curve: &BoundCurve<f64>) -> String {
    format!("{name}_{}", curve.metric)
}

/// Wide CSV: `k` then one column per curve, labelled `<bound>_<metric>`.
pub fn bounds_csv(curves: &[(String, BoundCurve<f64>)]) -> String {
    let mut out = String::from("k");
    for (name, c) in curves {
        out.push(',');
        out.push_str(&curve_label(name, c));
    }
    out.push('\n');
    let len = curves.iter().map(|(_, c)| c.values.len()).max().unwrap_or(0);
    for k in 0..len {
        out.push_str(&k.to_string());
        for (_, c) in curves {
            out.push(',');
            if let Some(v) = c.values.get(k) {
                out.push_str(&num(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Aligned columns for `compare`, one per labelled series.
pub fn compare_csv(series: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("k");
    for (name, _) in series {
        out.push_str(",gap_");
        out.push_str(name);
    }
    out.push('\n');
    let len = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    for k in 0..len {
        out.push_str(&k.to_string());
        for (_, s) in series {
            out.push(',');
            if let Some(v) = s.get(k) {
                out.push_str(&num(*v));
            }
        }
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// A plotted series; dashed series are bounds.
pub struct Series<'a> {
    pub label: String,
    pub values: &'a [f64],
    pub dashed: bool,
}

/// Log-scale line plot. Non-positive and non-finite values are dropped.
pub fn log_plot_svg(title: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let (w, h) = (720.0, 460.0);
    let (left, right, top, bottom) = (70.0, 190.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let positive = |v: &f64| v.is_finite() && *v > 0.0;
    let all: Vec<f64> = series
        .iter()
        .flat_map(|s| s.values.iter().copied().filter(positive))
        .collect();
    let kmax = series.iter().map(|s| s.values.len()).max().unwrap_or(1).saturating_sub(1).max(1) as f64;
    let (mut lo, mut hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.log10()), b.max(v.log10())));
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 0.0);
    }
    lo = lo.floor();
    hi = hi.ceil().max(lo + 1.0);
    let x = |k: f64| left + pw * k / kmax;
    let y = |v: f64| top + ph * (hi - v.log10()) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let decades = (hi - lo) as i64;
    let step = (decades / 8).max(1);
    let mut e = lo as i64;
    while e <= hi as i64 {
        let yy = top + ph * (hi - e as f64) / (hi - lo);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            left + pw,
            left - 6.0,
            yy + 4.0
        );
        e += step;
    }
    for i in 0..=4 {
        let k = kmax * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x(k),
            top + ph + 18.0,
            k.round()
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| positive(v))
            .map(|(k, v)| format!("{:.2},{:.2}", x(k as f64), y(*v)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="1.5"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
