//! Static SVG plots of log10 error against iteration.
//!
//! Traces are grouped into panels by parent directory; within a panel each
//! file is one curve named after its stem. Curves use `err_fro` when every
//! record has it and fall back to `f` otherwise.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use precgd::IterationRecord;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;
/// Points kept per curve after resampling.
pub const MAX_POINTS: usize = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    /// `(k, log10 value)` for finite, positive values before any failure.
    pub points: Vec<(usize, f64)>,
    /// Run ended in a failure (non-finite values or a singular preconditioner).
    pub diverged: bool,
    pub quantity: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub curves: Vec<Curve>,
}

pub fn curve_from_records(label: &str, records: &[IterationRecord]) -> CliResult<Curve> {
    if records.is_empty() {
        return Err(CliError::Io(format!("trace {label:?} is empty")));
    }
    let use_err = records.iter().all(|r| r.err_fro.is_some());
    let value = |r: &IterationRecord| if use_err { r.err_fro.unwrap_or(f64::NAN) } else { r.f };
    let mut raw = Vec::new();
    let mut diverged = false;
    for r in records {
        let v = value(r);
        if r.flag.is_failure() || !v.is_finite() {
            diverged = true;
            break;
        }
        raw.push((r.k, if v > 0.0 { v.log10() } else { f64::NEG_INFINITY }));
    }
    let raw: Vec<(usize, f64)> = raw.into_iter().filter(|p| p.1.is_finite()).collect();
    Ok(Curve {
        label: label.to_string(),
        points: resample(&raw, MAX_POINTS),
        diverged,
        quantity: if use_err { "log10 ||XX^T - M*||_F" } else { "log10 f" },
    })
}

/// Keeps at most `max` points, evenly strided, always including the last.
pub fn resample(points: &[(usize, f64)], max: usize) -> Vec<(usize, f64)> {
    if points.len() <= max || max < 2 {
        return points.to_vec();
    }
    let stride = (points.len() - 1) as f64 / (max - 1) as f64;
    (0..max).map(|i| points[((i as f64 * stride).round() as usize).min(points.len() - 1)]).collect()
}

/// Expands directories into the `.csv` files they contain (one level).
pub fn expand_inputs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.extension().is_some_and(|x| x == "csv") && q.is_file())
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Io("no trace files to plot".into()));
    }
    Ok(files)
}

pub fn load_panels(files: &[PathBuf]) -> CliResult<Vec<Panel>> {
    let mut panels: BTreeMap<String, Vec<Curve>> = BTreeMap::new();
    for f in files {
        let records = precgd::io::load_trace(f)?;
        let label = f.file_stem().map_or_else(|| "trace".to_string(), |s| s.to_string_lossy().into_owned());
        let panel = f
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let curve = curve_from_records(&label, &records).map_err(|e| match e {
            CliError::Io(msg) => CliError::Io(format!("{}: {msg}", f.display())),
            other => other,
        })?;
        panels.entry(panel).or_default().push(curve);
    }
    Ok(panels.into_iter().map(|(title, curves)| Panel { title, curves }).collect())
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Renders all panels into one SVG document. `provenance` is written into
/// the `<metadata>` element.
pub fn render_svg(panels: &[Panel], provenance: &str) -> String {
    let cols = panels.len().clamp(1, 3);
    let rows = panels.len().div_ceil(cols).max(1);
    let width = cols as f64 * PANEL_W;
    let height = rows as f64 * PANEL_H + 24.0;
    let mut labels: Vec<&str> = panels.iter().flat_map(|p| p.curves.iter().map(|c| c.label.as_str())).collect();
    labels.sort();
    labels.dedup();
    let color = |l: &str| PALETTE[labels.iter().position(|x| *x == l).unwrap_or(0) % PALETTE.len()];

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<metadata>{}</metadata>", esc(provenance));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    for (i, panel) in panels.iter().enumerate() {
        let ox = (i % cols) as f64 * PANEL_W;
        let oy = (i / cols) as f64 * PANEL_H;
        let (x0, x1) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R);
        let (y0, y1) = (oy + MARGIN_T, oy + PANEL_H - MARGIN_B);
        let kmax = panel.curves.iter().flat_map(|c| c.points.last()).map(|p| p.0).max().unwrap_or(1).max(1) as f64;
        let vals = panel.curves.iter().flat_map(|c| c.points.iter().map(|p| p.1));
        let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (-1.0, 1.0);
        }
        let (lo, hi) = (lo.floor(), hi.ceil().max(lo.floor() + 1.0));
        let px = |k: f64| x0 + (x1 - x0) * k / kmax;
        let py = |v: f64| y1 - (y1 - y0) * (v - lo) / (hi - lo);

        let _ = writeln!(s, r#"<g class="panel">"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{}</text>"#, (x0 + x1) / 2.0, oy + 18.0, esc(&panel.title));
        let _ = writeln!(s, r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
        let step = ((hi - lo) / 6.0).ceil().max(1.0);
        let mut t = lo;
        while t <= hi + 1e-9 {
            let y = py(t);
            let _ = writeln!(s, r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#ddd"/>"##);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t}</text>"#, x0 - 4.0, y + 4.0);
            t += step;
        }
        let _ = writeln!(s, r#"<text x="{x0:.1}" y="{:.1}">0</text>"#, y1 + 14.0);
        let _ = writeln!(s, r#"<text x="{x1:.1}" y="{:.1}" text-anchor="end">{}</text>"#, y1 + 14.0, kmax as usize);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">iteration</text>"#, (x0 + x1) / 2.0, y1 + 28.0);
        if let Some(c) = panel.curves.first() {
            let _ = writeln!(
                s,
                r#"<text transform="translate({:.1},{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
                ox + 14.0,
                (y0 + y1) / 2.0,
                esc(c.quantity)
            );
        }
        for (j, c) in panel.curves.iter().enumerate() {
            let col = color(&c.label);
            let pts: Vec<String> = c.points.iter().map(|&(k, v)| format!("{:.2},{:.2}", px(k as f64), py(v))).collect();
            let _ = writeln!(
                s,
                r#"<polyline class="curve" data-label="{}" fill="none" stroke="{col}" stroke-width="1.5" points="{}"/>"#,
                esc(&c.label),
                pts.join(" ")
            );
            if c.diverged {
                if let Some(&(k, v)) = c.points.last() {
                    let (x, y) = (px(k as f64), py(v));
                    let _ = writeln!(
                        s,
                        r#"<path class="diverged" d="M{:.1},{:.1} L{:.1},{:.1} M{:.1},{:.1} L{:.1},{:.1}" stroke="{col}" stroke-width="2"/>"#,
                        x - 5.0,
                        y - 5.0,
                        x + 5.0,
                        y + 5.0,
                        x - 5.0,
                        y + 5.0,
                        x + 5.0,
                        y - 5.0
                    );
                }
            }
            let ly = y0 + 12.0 + 13.0 * j as f64;
            let _ = writeln!(s, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{col}" stroke-width="2"/>"#, x1 - 110.0, x1 - 94.0);
            let tag = if c.diverged { " (diverged)" } else { "" };
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}{tag}</text>"#, x1 - 90.0, ly + 4.0, esc(&c.label));
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// The plotted points as `panel,label,k,log10_value,diverged` rows.
pub fn resampled_csv(panels: &[Panel]) -> String {
    let mut s = String::from("panel,label,k,log10_value,diverged\n");
    for p in panels {
        for c in &p.curves {
            for &(k, v) in &c.points {
                let _ = writeln!(s, "{},{},{k},{v},{}", p.title, c.label, c.diverged);
            }
        }
    }
    s
}

/// Writes `<stem>.svg` and `<stem>.csv` into `dir`.
pub fn write_plot(dir: &Path, stem: &str, panels: &[Panel], provenance: &str) -> CliResult<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let svg = dir.join(format!("{stem}.svg"));
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&svg, render_svg(panels, provenance)).map_err(|e| CliError::io(&svg, e))?;
    std::fs::write(&csv, resampled_csv(panels)).map_err(|e| CliError::io(&csv, e))?;
    Ok((svg, csv))
}
