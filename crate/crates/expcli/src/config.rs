//! Experiment configuration (TOML).
//!
//! ```toml
//! [problem]
//! n = 20
//! r_star = 2
//! r = 4
//! kappa = 10.0
//! m = 640
//! sigma = 0.0
//! ensemble = "gaussian"      # gaussian | identity | file
//! seeds = [0, 1, 2]
//!
//! [[solver]]
//! label = "precgd"
//! method = "prec_gd"         # gd | scaled_gd | prec_gd
//! step = { kind = "fixed", alpha = 0.02 }
//! damping = { kind = "sqrt_f" }
//! max_iters = 1500
//!
//! [output]
//! dir = "out"
//! [output.sweep]
//! sigma = [0.01, 0.1]
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use precgd::{DampingSchedule, LossKind, Method, Normalization, SolverConfig, StepPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default, rename = "solver")]
    pub solvers: Vec<SolverEntry>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleChoice {
    Gaussian,
    Identity,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationChoice {
    Count,
    Unit,
}

impl From<NormalizationChoice> for Normalization {
    fn from(n: NormalizationChoice) -> Self {
        match n {
            NormalizationChoice::Count => Normalization::Count,
            NormalizationChoice::Unit => Normalization::Unit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitChoice {
    /// Rank-r projection of `A*(y)/c`.
    Spectral,
    /// `scale * N(0, 1)` entries.
    Random { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub n: usize,
    pub r_star: usize,
    pub r: usize,
    pub kappa: f64,
    /// Number of measurements; fixed to `n^2` for the identity ensemble and
    /// taken from the file for `ensemble = "file"`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub sigma: f64,
    pub ensemble: EnsembleChoice,
    #[serde(default)]
    pub ensemble_path: Option<PathBuf>,
    #[serde(default)]
    pub normalization: Option<NormalizationChoice>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_init")]
    pub init: InitChoice,
    /// Exponent of the l_p loss for solvers with `loss = "lp"`.
    #[serde(default)]
    pub p: Option<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_init() -> InitChoice {
    InitChoice::Spectral
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Gd,
    ScaledGd,
    PrecGd,
}

impl From<MethodChoice> for Method {
    fn from(m: MethodChoice) -> Self {
        match m {
            MethodChoice::Gd => Method::Gd,
            MethodChoice::ScaledGd => Method::ScaledGd,
            MethodChoice::PrecGd => Method::PrecGd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum StepEntry {
    Fixed { alpha: f64 },
    /// `f^e / ||grad||_P*`; `e` defaults to the problem's `p`.
    Polyak {
        #[serde(default)]
        exponent: Option<f64>,
    },
    Decaying { initial: f64, decay: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DampingEntry {
    Fixed { eta: f64 },
    SqrtF,
    Oracle,
    /// `sigma2` defaults to the problem's `sigma^2`.
    VarianceProxy {
        #[serde(default)]
        sigma2: Option<f64>,
    },
    LpRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    L2,
    Lp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverEntry {
    pub label: String,
    pub method: MethodChoice,
    pub step: StepEntry,
    #[serde(default)]
    pub damping: Option<DampingEntry>,
    #[serde(default = "default_loss")]
    pub loss: LossChoice,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol_f")]
    pub tol_f: f64,
    #[serde(default)]
    pub tol_error: Option<f64>,
    #[serde(default)]
    pub diagnostics: bool,
}

fn default_loss() -> LossChoice {
    LossChoice::L2
}

fn default_max_iters() -> usize {
    5000
}

fn default_tol_f() -> f64 {
    1e-20
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub m: Option<Vec<usize>>,
    #[serde(default)]
    pub r: Option<Vec<usize>>,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub plot: bool,
    #[serde(default)]
    pub sweep: Option<SweepAxes>,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, plot: true, sweep: None }
    }
}

/// Values that a sweep may override.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    pub sigma: f64,
    pub m: Option<usize>,
    pub r: usize,
    pub p: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        Ok((cfg, text))
    }

    pub fn base_cell(&self) -> CellParams {
        CellParams { sigma: self.problem.sigma, m: self.problem.m, r: self.problem.r, p: self.problem.p }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let pb = &self.problem;
        if pb.n == 0 || pb.r_star == 0 || pb.r_star > pb.n {
            return bad(format!("problem: need 1 <= r_star <= n, got n={}, r_star={}", pb.n, pb.r_star));
        }
        if pb.r == 0 || pb.r > pb.n {
            return bad(format!("problem.r must lie in [1, n], got {}", pb.r));
        }
        if !(pb.kappa >= 1.0) || !pb.kappa.is_finite() {
            return bad(format!("problem.kappa must be finite and >= 1, got {}", pb.kappa));
        }
        if !(pb.sigma >= 0.0) || !pb.sigma.is_finite() {
            return bad(format!("problem.sigma must be finite and >= 0, got {}", pb.sigma));
        }
        if pb.seeds.is_empty() {
            return bad("problem.seeds must not be empty".into());
        }
        match pb.ensemble {
            EnsembleChoice::Gaussian if pb.m.is_none_or(|m| m == 0) => {
                return bad("problem.m (>= 1) is required for the gaussian ensemble".into());
            }
            EnsembleChoice::Identity if pb.m.is_some_and(|m| m != pb.n * pb.n) => {
                return bad(format!("problem.m must be n^2 = {} for the identity ensemble", pb.n * pb.n));
            }
            EnsembleChoice::File if pb.ensemble_path.is_none() => {
                return bad("problem.ensemble_path is required for ensemble = \"file\"".into());
            }
            _ => {}
        }
        if let InitChoice::Random { scale } = pb.init {
            if !(scale > 0.0) || !scale.is_finite() {
                return bad(format!("problem.init.scale must be > 0, got {scale}"));
            }
        }
        if self.solvers.is_empty() {
            return bad("at least one [[solver]] block is required".into());
        }
        let mut seen = HashSet::new();
        for s in &self.solvers {
            if s.label.is_empty() || !s.label.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return bad(format!("solver label {:?} must be non-empty and use only [A-Za-z0-9._-]", s.label));
            }
            if !seen.insert(s.label.as_str()) {
                return bad(format!("duplicate solver label {:?}", s.label));
            }
            if s.loss == LossChoice::Lp && pb.p.is_none() && self.sweep_axes().p.is_none() {
                return bad(format!("solver {:?} uses loss = \"lp\" but problem.p is not set", s.label));
            }
            for p in self.p_values() {
                self.solver_config(s, &CellParams { p, ..self.base_cell() }, 0.0)?.validate().map_err(|e| {
                    CliError::Config(format!("solver {:?}: {e}", s.label))
                })?;
            }
        }
        let axes = self.sweep_axes();
        if axes.sigma.as_ref().is_some_and(|v| v.is_empty() || v.iter().any(|s| !(*s >= 0.0) || !s.is_finite())) {
            return bad("output.sweep.sigma must be a non-empty list of finite values >= 0".into());
        }
        if let Some(ms) = &axes.m {
            if pb.ensemble != EnsembleChoice::Gaussian {
                return bad("output.sweep.m only applies to the gaussian ensemble".into());
            }
            if ms.is_empty() || ms.contains(&0) {
                return bad("output.sweep.m must be a non-empty list of values >= 1".into());
            }
        }
        if axes.r.as_ref().is_some_and(|v| v.is_empty() || v.iter().any(|&r| r == 0 || r > pb.n)) {
            return bad(format!("output.sweep.r values must lie in [1, {}]", pb.n));
        }
        if let Some(ps) = &axes.p {
            if !self.solvers.iter().any(|s| s.loss == LossChoice::Lp) {
                return bad("output.sweep.p is set but no solver uses loss = \"lp\"".into());
            }
            if ps.is_empty() {
                return bad("output.sweep.p must not be empty".into());
            }
        }
        Ok(())
    }

    pub fn sweep_axes(&self) -> SweepAxes {
        self.output.sweep.clone().unwrap_or_default()
    }

    fn p_values(&self) -> Vec<Option<f64>> {
        match &self.sweep_axes().p {
            Some(ps) => ps.iter().map(|&p| Some(p)).collect(),
            None => vec![self.problem.p],
        }
    }

    /// Core solver configuration for one entry in one sweep cell.
    pub fn solver_config(&self, s: &SolverEntry, cell: &CellParams, sigma2: f64) -> CliResult<SolverConfig> {
        let need_p = |what: &str| {
            cell.p.ok_or_else(|| CliError::Config(format!("solver {:?}: {what} needs problem.p", s.label)))
        };
        let step = match s.step {
            StepEntry::Fixed { alpha } => StepPolicy::Fixed(alpha),
            StepEntry::Polyak { exponent } => StepPolicy::Polyak {
                exponent: match exponent {
                    Some(e) => e,
                    None => need_p("a Polyak step without an exponent")?,
                },
            },
            StepEntry::Decaying { initial, decay } => StepPolicy::Decaying { initial, decay },
        };
        let damping = match s.damping {
            None | Some(DampingEntry::SqrtF) => DampingSchedule::NoiselessSqrtF,
            Some(DampingEntry::Fixed { eta }) => DampingSchedule::Fixed(eta),
            Some(DampingEntry::Oracle) => DampingSchedule::OracleResidual,
            Some(DampingEntry::VarianceProxy { sigma2: s2 }) => DampingSchedule::VarianceProxy(s2.unwrap_or(sigma2)),
            Some(DampingEntry::LpRoot) => DampingSchedule::LpRoot(need_p("lp_root damping")?),
        };
        let loss = match s.loss {
            LossChoice::L2 => LossKind::L2,
            LossChoice::Lp => LossKind::Lp(need_p("the lp loss")?),
        };
        Ok(SolverConfig::new(s.method.into(), step)
            .damping(damping)
            .loss(loss)
            .max_iters(s.max_iters)
            .tol_f(s.tol_f)
            .tol_error(s.tol_error)
            .record_diagnostics(s.diagnostics))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
n = 4
r_star = 2
r = 2
kappa = 2.0
m = 40
ensemble = "gaussian"

[[solver]]
label = "gd"
method = "gd"
step = { kind = "fixed", alpha = 0.02 }
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(cfg.problem.seeds, vec![0]);
        assert_eq!(cfg.solvers[0].max_iters, 5000);
        assert!(cfg.output.plot);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let text = BASE.replace("r = 2\n", "r = 2\nkapa = 3.0\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("kapa"), "{err}");
    }

    #[test]
    fn unknown_sweep_axis_is_rejected() {
        let text = format!("{BASE}\n[output.sweep]\nsigmas = [0.1]\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("sigmas"), "{err}");
    }

    #[test]
    fn empty_solver_list_is_config_error() {
        let text = BASE.split("[[solver]]").next().unwrap();
        assert!(matches!(ExperimentConfig::parse(text), Err(CliError::Config(_))));
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let text = format!("{BASE}\n[[solver]]\nlabel = \"gd\"\nmethod = \"prec_gd\"\nstep = {{ kind = \"fixed\", alpha = 0.1 }}\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn lp_loss_requires_exponent() {
        let text = BASE.replace("step = {", "loss = \"lp\"\nstep = {");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = text.replace("ensemble = \"gaussian\"", "ensemble = \"gaussian\"\np = 1.4");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let sc = cfg.solver_config(&cfg.solvers[0], &cfg.base_cell(), 0.0).unwrap();
        assert_eq!(sc.loss, LossKind::Lp(1.4));
    }

    #[test]
    fn p_axis_needs_an_lp_solver() {
        let text = format!("{BASE}\n[output.sweep]\np = [1.1]\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn variance_proxy_defaults_to_problem_noise() {
        let text = BASE
            .replace("method = \"gd\"", "method = \"prec_gd\"\ndamping = { kind = \"variance_proxy\" }")
            .replace("ensemble = \"gaussian\"", "ensemble = \"gaussian\"\nsigma = 0.1");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let sc = cfg.solver_config(&cfg.solvers[0], &cfg.base_cell(), 0.01).unwrap();
        assert_eq!(sc.damping, DampingSchedule::VarianceProxy(0.01));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::parse(BASE).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }
}
