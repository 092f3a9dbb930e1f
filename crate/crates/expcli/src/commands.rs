//! Subcommand implementations. Each returns what it wrote so the binary can
//! report it and tests can inspect it.

use std::path::{Path, PathBuf};

use precgd::analysis::{diagnose, DiagnoseOptions, DiagnosticsReport};
use precgd::{Method, ProblemInstance};
use serde::Serialize;

use crate::config::{CellParams, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{build_instance, initial_point, run_solvers, summarize, LabelSummary};
use crate::plot::{self, Panel};
use crate::sweep::{self, SlopeFit, TableRow};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

pub struct Loaded {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
}

impl Globals {
    pub fn load(&self) -> CliResult<Loaded> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config PATH is required for this command".into()))?;
        let (cfg, text) = ExperimentConfig::load(path)?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let seeds = self.seed.map_or_else(|| cfg.problem.seeds.clone(), |s| vec![s]);
        Ok(Loaded { cfg, hash: plot::sha256_hex(text.as_bytes()), out, seeds })
    }
}

fn mkdir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn instance_file_name(seed: u64) -> String {
    format!("instance-seed{seed}.bin")
}

/// Writes one instance file per seed.
pub fn cmd_generate(g: &Globals) -> CliResult<Vec<PathBuf>> {
    let l = g.load()?;
    mkdir(&l.out)?;
    let cell = l.cfg.base_cell();
    l.seeds
        .iter()
        .map(|&seed| {
            let inst = build_instance(&l.cfg, &cell, seed)?;
            let path = l.out.join(instance_file_name(seed));
            precgd::io::save_instance(&path, &inst)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config_sha256: String,
    pub seed: u64,
    pub solvers: Vec<LabelSummary>,
    #[serde(skip)]
    pub trace_files: Vec<PathBuf>,
}

/// Runs every solver from one shared starting point. Uses `instance` when
/// given, otherwise generates it from the config and the first seed.
pub fn cmd_run(g: &Globals, instance: Option<&Path>) -> CliResult<RunReport> {
    let l = g.load()?;
    let seed = l.seeds[0];
    let (inst, cell): (ProblemInstance, CellParams) = match instance {
        Some(path) => {
            let inst = precgd::io::load_instance(path)?;
            let cell = CellParams {
                sigma: inst.observations().sigma2().sqrt(),
                m: Some(inst.ensemble().m()),
                r: inst.search_rank(),
                p: l.cfg.problem.p,
            };
            (inst, cell)
        }
        None => {
            let cell = l.cfg.base_cell();
            (build_instance(&l.cfg, &cell, seed)?, cell)
        }
    };
    let x0 = initial_point(&l.cfg, &inst, seed)?;
    let runs = run_solvers(&l.cfg, &inst, &cell, &x0)?;
    let dir = l.out.join("run");
    mkdir(&dir)?;
    let mut solvers = Vec::new();
    let mut trace_files = Vec::new();
    for ((label, out), entry) in runs.iter().zip(&l.cfg.solvers) {
        let path = dir.join(format!("{label}.csv"));
        precgd::io::save_trace(&path, &out.trace.records)?;
        trace_files.push(path);
        solvers.push(summarize(label, Method::from(entry.method).name(), out, &inst)?);
    }
    let report = RunReport { config_sha256: l.hash.clone(), seed, solvers, trace_files };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    write(&dir.join("summary.json"), json + "\n")?;
    if l.cfg.output.plot {
        let panels = plot::load_panels(&report.trace_files)?;
        plot::write_plot(&dir, "plot", &panels, &provenance_config(&l.hash))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub table: Vec<TableRow>,
    pub fits: Vec<SlopeFit>,
}

/// Runs the cross product of sweep axes and seeds, writing `table.csv`,
/// `fits.json` and the traces of the first seed of each cell.
pub fn cmd_sweep(g: &Globals) -> CliResult<SweepReport> {
    let l = g.load()?;
    let pool = sweep::thread_pool(g.threads)?;
    let results = sweep::run_cells(&l.cfg, &l.seeds, &pool)?;
    let table = sweep::aggregate(&l.cfg, &results);
    let fits = sweep::fit_slopes(&table);
    let dir = l.out.join("sweep");
    mkdir(&dir)?;
    write(&dir.join("table.csv"), sweep::table_csv(&table))?;
    let report = SweepReport { config_sha256: l.hash.clone(), seeds: l.seeds.clone(), table, fits };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    write(&dir.join("fits.json"), json + "\n")?;

    let mut trace_files = Vec::new();
    for res in results.iter().filter(|r| r.seed == l.seeds[0]) {
        let cell_dir = dir.join("traces").join(res.cell.dir_name(&l.cfg));
        mkdir(&cell_dir)?;
        for lr in &res.labels {
            let path = cell_dir.join(format!("{}.csv", lr.label));
            precgd::io::save_trace(&path, &lr.records)?;
            trace_files.push(path);
        }
    }
    if l.cfg.output.plot && !trace_files.is_empty() {
        let panels = plot::load_panels(&trace_files)?;
        plot::write_plot(&dir, "plot", &panels, &provenance_config(&l.hash))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DiagnoseArgs {
    pub eta: Option<f64>,
    pub delta: Option<f64>,
    pub rho: Option<f64>,
}

pub fn cmd_diagnose(g: &Globals, instance: &Path, factor: &Path, args: DiagnoseArgs) -> CliResult<DiagnosticsReport> {
    let inst = precgd::io::load_instance(instance)?;
    let x = precgd::io::load_factor(factor)?;
    let mut opts = DiagnoseOptions { eta: args.eta, delta: args.delta, seed: g.seed.unwrap_or(0), ..Default::default() };
    if let Some(rho) = args.rho {
        opts.rho = rho;
    }
    let report = diagnose(&inst, &x, &opts)?;
    if let Some(out) = &g.out {
        mkdir(out)?;
        write(&out.join("diagnostics.txt"), report.to_kv())?;
    }
    Ok(report)
}

fn provenance_config(hash: &str) -> String {
    format!("config-sha256={hash}")
}

/// Plots the given trace files (directories expand to their CSV files).
pub fn cmd_plot(g: &Globals, inputs: &[PathBuf]) -> CliResult<(PathBuf, PathBuf, Vec<Panel>)> {
    let files = plot::expand_inputs(inputs)?;
    let panels = plot::load_panels(&files)?;
    let provenance = match &g.config {
        Some(path) => {
            let text = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            provenance_config(&plot::sha256_hex(&text))
        }
        None => {
            let mut all = Vec::new();
            for f in &files {
                all.extend(std::fs::read(f).map_err(|e| CliError::io(f, e))?);
            }
            format!("traces-sha256={}", plot::sha256_hex(&all))
        }
    };
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let (svg, csv) = plot::write_plot(&out, "plot", &panels, &provenance)?;
    Ok((svg, csv, panels))
}
