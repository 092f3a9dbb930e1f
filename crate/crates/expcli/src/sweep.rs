//! Parameter sweeps: cross product of axes and seeds, aggregated per cell.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use precgd::IterationRecord;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CellParams, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{build_instance, initial_point, run_solvers, summarize};

/// One point of the axis grid (seeds excluded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellKey {
    pub sigma: f64,
    pub m: Option<usize>,
    pub r: usize,
    pub p: Option<f64>,
}

impl CellKey {
    fn params(&self) -> CellParams {
        CellParams { sigma: self.sigma, m: self.m, r: self.r, p: self.p }
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        self.r
            .cmp(&other.r)
            .then(self.p.unwrap_or(0.0).total_cmp(&other.p.unwrap_or(0.0)))
            .then(self.sigma.total_cmp(&other.sigma))
            .then(self.m.cmp(&other.m))
    }

    /// Directory name listing only the swept axes, e.g. `r=4_p=1.4`.
    pub fn dir_name(&self, cfg: &ExperimentConfig) -> String {
        let axes = cfg.sweep_axes();
        let mut parts = Vec::new();
        if axes.r.is_some() {
            parts.push(format!("r={}", self.r));
        }
        if let (Some(_), Some(p)) = (&axes.p, self.p) {
            parts.push(format!("p={p}"));
        }
        if axes.sigma.is_some() {
            parts.push(format!("sigma={}", self.sigma));
        }
        if let (Some(_), Some(m)) = (&axes.m, self.m) {
            parts.push(format!("m={m}"));
        }
        if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join("_")
        }
    }
}

pub fn cell_keys(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let axes = cfg.sweep_axes();
    let base = cfg.base_cell();
    let sigmas = axes.sigma.unwrap_or_else(|| vec![base.sigma]);
    let ms = axes.m.map(|v| v.into_iter().map(Some).collect()).unwrap_or_else(|| vec![base.m]);
    let rs = axes.r.unwrap_or_else(|| vec![base.r]);
    let ps = axes.p.map(|v| v.into_iter().map(Some).collect()).unwrap_or_else(|| vec![base.p]);
    let mut keys = Vec::new();
    for &r in &rs {
        for &p in &ps {
            for &sigma in &sigmas {
                for &m in &ms {
                    keys.push(CellKey { sigma, m, r, p });
                }
            }
        }
    }
    keys
}

/// Outcome of every solver on one (cell, seed) pair.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub cell: CellKey,
    pub seed: u64,
    pub labels: Vec<LabelResult>,
}

#[derive(Debug, Clone)]
pub struct LabelResult {
    pub label: String,
    /// Squared error of the selected iterate.
    pub err2: Option<f64>,
    pub diverged: bool,
    pub records: Vec<IterationRecord>,
}

pub fn run_seed(cfg: &ExperimentConfig, cell: CellKey, seed: u64) -> CliResult<SeedResult> {
    let params = cell.params();
    let instance = build_instance(cfg, &params, seed)?;
    let x0 = initial_point(cfg, &instance, seed)?;
    let runs = run_solvers(cfg, &instance, &params, &x0)?;
    let mut labels = Vec::with_capacity(runs.len());
    for ((label, out), entry) in runs.into_iter().zip(&cfg.solvers) {
        let s = summarize(&label, precgd::Method::from(entry.method).name(), &out, &instance)?;
        labels.push(LabelResult {
            label,
            err2: s.best_error.map(|e| e * e),
            diverged: s.diverged,
            records: out.trace.records,
        });
    }
    Ok(SeedResult { cell, seed, labels })
}

/// Runs all (cell, seed) pairs on the given pool, in parallel across pairs.
pub fn run_cells(cfg: &ExperimentConfig, seeds: &[u64], pool: &rayon::ThreadPool) -> CliResult<Vec<SeedResult>> {
    let jobs: Vec<(CellKey, u64)> = cell_keys(cfg)
        .into_iter()
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let mut results = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, seed)| run_seed(cfg, cell, seed))
            .collect::<CliResult<Vec<_>>>()
    })?;
    results.sort_by(|a, b| a.cell.cmp_key(&b.cell).then(a.seed.cmp(&b.seed)));
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub r: usize,
    pub p: Option<f64>,
    pub sigma: f64,
    pub m: Option<usize>,
    pub label: String,
    pub median_err2: Option<f64>,
    pub seeds: usize,
    pub diverged: usize,
    /// `sigma^2 n r log(n) / m`, the statistical error scale.
    pub e_stat: Option<f64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let k = values.len();
    Some(if k % 2 == 1 { values[k / 2] } else { 0.5 * (values[k / 2 - 1] + values[k / 2]) })
}

/// Median squared error per (cell, label). Input order does not matter.
pub fn aggregate(cfg: &ExperimentConfig, results: &[SeedResult]) -> Vec<TableRow> {
    let label_order = |l: &str| cfg.solvers.iter().position(|s| s.label == l).unwrap_or(usize::MAX);
    // sigma and p are non-negative, so their bit patterns sort numerically
    type Key = (usize, u64, u64, Option<usize>, usize, String);
    let mut groups: BTreeMap<Key, (CellKey, Vec<f64>, usize, usize)> = BTreeMap::new();
    for res in results {
        let c = res.cell;
        for lr in &res.labels {
            let key = (c.r, c.p.unwrap_or(0.0).to_bits(), c.sigma.to_bits(), c.m, label_order(&lr.label), lr.label.clone());
            let g = groups.entry(key).or_insert_with(|| (c, Vec::new(), 0, 0));
            if let Some(e) = lr.err2.filter(|e| e.is_finite()) {
                g.1.push(e);
            }
            g.2 += 1;
            g.3 += usize::from(lr.diverged);
        }
    }
    let n = cfg.problem.n as f64;
    groups
        .into_iter()
        .map(|((.., label), (cell, mut errs, seeds, diverged))| {
            TableRow {
                r: cell.r,
                p: cell.p,
                sigma: cell.sigma,
                m: cell.m,
                label,
                median_err2: median(&mut errs),
                seeds,
                diverged,
                e_stat: cell.m.map(|m| cell.sigma * cell.sigma * n * cell.r as f64 * n.ln() / m as f64),
            }
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`; needs two distinct
/// positive abscissae.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub label: String,
    /// `sigma` or `m`.
    pub axis: String,
    /// Values of the other axes held fixed.
    pub r: usize,
    pub p: Option<f64>,
    pub sigma: Option<f64>,
    pub m: Option<usize>,
    pub slope: Option<f64>,
    pub expected: f64,
}

/// Slopes of median squared error against `sigma` (expected 2) and `m`
/// (expected -1), one per label and combination of the remaining axes.
pub fn fit_slopes(table: &[TableRow]) -> Vec<SlopeFit> {
    let mut fits = Vec::new();
    let mut groups: BTreeMap<(usize, u64, Option<usize>, String), Vec<(f64, f64)>> = BTreeMap::new();
    for row in table {
        let key = (row.r, row.p.unwrap_or(0.0).to_bits(), row.m, row.label.clone());
        groups.entry(key).or_default().push((row.sigma, row.median_err2.unwrap_or(f64::NAN)));
    }
    for ((r, p, m, label), pts) in groups {
        if pts.len() >= 2 {
            fits.push(SlopeFit {
                label,
                axis: "sigma".into(),
                r,
                p: (p != 0).then(|| f64::from_bits(p)),
                sigma: None,
                m,
                slope: loglog_slope(&pts),
                expected: 2.0,
            });
        }
    }
    let mut groups: BTreeMap<(usize, u64, u64, String), Vec<(f64, f64)>> = BTreeMap::new();
    for row in table {
        if let Some(m) = row.m {
            let key = (row.r, row.p.unwrap_or(0.0).to_bits(), row.sigma.to_bits(), row.label.clone());
            groups.entry(key).or_default().push((m as f64, row.median_err2.unwrap_or(f64::NAN)));
        }
    }
    for ((r, p, sigma, label), pts) in groups {
        if pts.len() >= 2 {
            fits.push(SlopeFit {
                label,
                axis: "m".into(),
                r,
                p: (p != 0).then(|| f64::from_bits(p)),
                sigma: Some(f64::from_bits(sigma)),
                m: None,
                slope: loglog_slope(&pts),
                expected: -1.0,
            });
        }
    }
    fits
}

pub fn table_csv(table: &[TableRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let mut s = String::from("r,p,sigma,m,label,median_err2,seeds,diverged,e_stat\n");
    for row in table {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.r,
            row.p.map(|p| p.to_string()).unwrap_or_default(),
            row.sigma,
            row.m.map(|m| m.to_string()).unwrap_or_default(),
            row.label,
            opt(row.median_err2),
            row.seeds,
            row.diverged,
            opt(row.e_stat),
        ));
    }
    s
}

pub fn thread_pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        b = b.num_threads(t);
    }
    b.build().map_err(|e| CliError::Config(e.to_string()))
}
