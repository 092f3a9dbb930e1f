//! Instance construction and multi-solver runs.

use precgd::model::{factor_error, make_ground_truth};
use precgd::rng::{derive_seed, gaussian_matrix, seeded};
use precgd::sensing::observe;
use precgd::solver::{run, spectral_init};
use precgd::{Factor, MeasurementEnsemble, ProblemInstance, RunOutcome};
use serde::Serialize;

use crate::config::{CellParams, EnsembleChoice, ExperimentConfig, InitChoice};
use crate::error::CliResult;

/// Sub-streams derived from a base seed.
pub const STREAM_TRUTH: u64 = 0;
pub const STREAM_ENSEMBLE: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_INIT: u64 = 3;

/// Error thresholds reported in run summaries.
pub const THRESHOLDS: [f64; 3] = [1e-3, 1e-6, 1e-9];

pub fn build_instance(cfg: &ExperimentConfig, cell: &CellParams, seed: u64) -> CliResult<ProblemInstance> {
    let pb = &cfg.problem;
    let truth = make_ground_truth(pb.n, pb.r_star, pb.kappa, derive_seed(seed, STREAM_TRUTH))?;
    let mut ens = match pb.ensemble {
        EnsembleChoice::Gaussian => {
            let m = cell.m.unwrap_or(0);
            MeasurementEnsemble::gaussian(pb.n, m, derive_seed(seed, STREAM_ENSEMBLE))?
        }
        EnsembleChoice::Identity => MeasurementEnsemble::identity(pb.n),
        EnsembleChoice::File => {
            let path = pb.ensemble_path.as_deref().unwrap_or(std::path::Path::new(""));
            let ens = precgd::io::load_ensemble(path)?;
            if ens.n() != pb.n {
                return Err(crate::error::CliError::Config(format!(
                    "ensemble file {} has n = {}, problem.n = {}",
                    path.display(),
                    ens.n(),
                    pb.n
                )));
            }
            ens
        }
    };
    if let Some(norm) = pb.normalization {
        ens = ens.with_normalization(norm.into());
    }
    let obs = observe(&ens, &truth, cell.sigma, derive_seed(seed, STREAM_NOISE))?;
    Ok(ProblemInstance::new(ens, obs, Some(truth), cell.r)?)
}

/// The starting point shared by every solver in a run.
pub fn initial_point(cfg: &ExperimentConfig, instance: &ProblemInstance, seed: u64) -> CliResult<Factor> {
    let r = instance.search_rank();
    Ok(match cfg.problem.init {
        InitChoice::Spectral => spectral_init(instance.ensemble(), instance.y(), r)?,
        InitChoice::Random { scale } => {
            let mut rng = seeded(derive_seed(seed, STREAM_INIT));
            Factor::new(gaussian_matrix(&mut rng, instance.n(), r) * scale)?
        }
    })
}

/// Runs every configured solver from the same `x0`.
pub fn run_solvers(
    cfg: &ExperimentConfig,
    instance: &ProblemInstance,
    cell: &CellParams,
    x0: &Factor,
) -> CliResult<Vec<(String, RunOutcome)>> {
    let sigma2 = instance.observations().sigma2();
    cfg.solvers
        .iter()
        .map(|s| {
            let sc = cfg.solver_config(s, cell, sigma2)?;
            Ok((s.label.clone(), run(instance, &sc, Some(x0.clone()))?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdHit {
    pub threshold: f64,
    /// First iteration with error at or below the threshold.
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSummary {
    pub label: String,
    pub method: String,
    pub stop: String,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub iterations: usize,
    pub final_f: Option<f64>,
    pub final_error: Option<f64>,
    pub best_k: usize,
    pub best_error: Option<f64>,
    pub iterations_to: Vec<ThresholdHit>,
}

pub fn summarize(label: &str, method: &str, out: &RunOutcome, instance: &ProblemInstance) -> CliResult<LabelSummary> {
    let tr = &out.trace;
    let best_error = instance.truth().map(|t| factor_error(&out.best, t)).transpose()?;
    Ok(LabelSummary {
        label: label.to_string(),
        method: method.to_string(),
        stop: tr.stop.as_str().to_string(),
        diverged: tr.diverged,
        divergence: tr.divergence.clone(),
        iterations: tr.records.last().map_or(0, |r| r.k),
        final_f: tr.records.iter().rev().find(|r| !r.flag.is_failure()).map(|r| r.f),
        final_error: tr.final_error(),
        best_k: out.best_k,
        best_error,
        iterations_to: THRESHOLDS
            .iter()
            .map(|&t| ThresholdHit { threshold: t, iteration: tr.first_below(t) })
            .collect(),
    })
}
