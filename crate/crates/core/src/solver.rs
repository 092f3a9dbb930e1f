//! Iteration engine for GD, ScaledGD and PrecGD.

use std::time::Instant;

use crate::analysis;
use crate::linalg::{all_finite, lambda_min_sym, sym_eigen_desc};
use crate::metric::{apply_inverse, damping, dual_p_norm, DampingSchedule};
use crate::model::{factor_error, Factor, ProblemInstance};
use crate::sensing::{self, MeasurementEnsemble};
use crate::{Error, Mat, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Gd,
    ScaledGd,
    PrecGd,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::ScaledGd => "scaledgd",
            Method::PrecGd => "precgd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    Fixed(f64),
    /// `alpha_k = f(X_k)^exponent / ||grad f(X_k)||_P*`.
    Polyak { exponent: f64 },
    /// `alpha_k = initial * decay^k`.
    Decaying { initial: f64, decay: f64 },
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepPolicy::Fixed(a) if !(a > 0.0) || !a.is_finite() => {
                Err(Error::Config(format!("fixed step must be finite and > 0, got {a}")))
            }
            StepPolicy::Polyak { exponent } if !(exponent > 0.0) || !exponent.is_finite() => {
                Err(Error::Config(format!("Polyak exponent must be finite and > 0, got {exponent}")))
            }
            StepPolicy::Decaying { initial, decay }
                if !(initial > 0.0) || !initial.is_finite() || !(decay > 0.0 && decay <= 1.0) =>
            {
                Err(Error::Config(format!(
                    "decaying step needs initial > 0 and decay in (0, 1], got ({initial}, {decay})"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `(1/c) ||y - A(XX^T)||^2`.
    L2,
    /// `sum_i |<A_i, XX^T> - y_i|^p`, `1 <= p < 2`.
    Lp(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    /// Ignored for GD; ScaledGD always uses `eta = 0`.
    pub damping: DampingSchedule,
    pub step: StepPolicy,
    pub loss: LossKind,
    pub max_iters: usize,
    pub tol_f: f64,
    pub tol_error: Option<f64>,
    pub record_diagnostics: bool,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(method: Method, step: StepPolicy) -> Self {
        SolverConfig {
            method,
            damping: DampingSchedule::NoiselessSqrtF,
            step,
            loss: LossKind::L2,
            max_iters: 5000,
            tol_f: 1e-20,
            tol_error: None,
            record_diagnostics: false,
            seed: 0,
        }
    }

    pub fn damping(mut self, damping: DampingSchedule) -> Self {
        self.damping = damping;
        self
    }

    pub fn loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn tol_f(mut self, tol_f: f64) -> Self {
        self.tol_f = tol_f;
        self
    }

    pub fn tol_error(mut self, tol_error: Option<f64>) -> Self {
        self.tol_error = tol_error;
        self
    }

    pub fn record_diagnostics(mut self, on: bool) -> Self {
        self.record_diagnostics = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.tol_f >= 0.0) {
            return Err(Error::Config(format!("tol_f must be >= 0, got {}", self.tol_f)));
        }
        if let Some(t) = self.tol_error {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("tol_error must be >= 0, got {t}")));
            }
        }
        if let LossKind::Lp(p) = self.loss {
            if !(1.0..2.0).contains(&p) {
                return Err(Error::Config(format!("l_p exponent must lie in [1, 2), got {p}")));
            }
        }
        self.step.validate()?;
        if self.method == Method::PrecGd {
            self.damping.validate()?;
        }
        Ok(())
    }

    /// The damping actually applied: none for GD, zero for ScaledGD.
    pub fn effective_damping(&self) -> Option<DampingSchedule> {
        match self.method {
            Method::Gd => None,
            Method::ScaledGd => Some(DampingSchedule::Fixed(0.0)),
            Method::PrecGd => Some(self.damping),
        }
    }
}

/// Best rank-`r` PSD approximation: keeps the `r` largest eigenvalues,
/// clipped at zero, and returns `U_r diag(sqrt(lambda))`.
pub fn rank_r_projection(m: &Mat, r: usize) -> Result<Factor> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::dim("rank_r_projection", "square matrix", format!("{}x{}", n, m.ncols())));
    }
    if r == 0 || r > n {
        return Err(Error::dim("rank_r_projection", format!("1 <= r <= n = {n}"), r));
    }
    let eig = sym_eigen_desc(m);
    let mut x = Mat::zeros(n, r);
    for k in 0..r {
        let s = eig.values[k].max(0.0).sqrt();
        x.set_column(k, &(eig.vectors.column(k) * s));
    }
    Factor::new(x)
}

/// `X_0 = P_r((1/c) A*(y))`.
pub fn spectral_init(ensemble: &MeasurementEnsemble, y: &Vector, r: usize) -> Result<Factor> {
    let m = ensemble.adjoint(y)? / ensemble.norm_const();
    rank_r_projection(&m, r)
}

/// One update. GD: `X - a G`; ScaledGD: `X - a G (X^T X)^{-1}`;
/// PrecGD: `X - a G (X^T X + eta I)^{-1}`.
pub fn step(method: Method, x: &Factor, grad: &Mat, alpha: f64, eta: f64) -> Result<Factor> {
    if grad.nrows() != x.n() || grad.ncols() != x.rank() {
        return Err(Error::dim("step", format!("{}x{}", x.n(), x.rank()), format!("{}x{}", grad.nrows(), grad.ncols())));
    }
    let dir = match method {
        Method::Gd => grad.clone(),
        Method::ScaledGd => apply_inverse(x, 0.0, grad)?,
        Method::PrecGd => apply_inverse(x, eta, grad)?,
    };
    Factor::new(x.as_mat() - dir * alpha)
}

/// Step size for iteration `k`. A Polyak step with a zero gradient norm
/// returns [`Error::Converged`].
pub fn step_size(policy: &StepPolicy, f: f64, grad_dual_p_norm: f64, k: usize) -> Result<f64> {
    policy.validate()?;
    match *policy {
        StepPolicy::Fixed(a) => Ok(a),
        StepPolicy::Polyak { exponent } => {
            if grad_dual_p_norm <= 0.0 {
                return Err(Error::Converged("Polyak step"));
            }
            Ok(f.max(0.0).powf(exponent) / grad_dual_p_norm)
        }
        StepPolicy::Decaying { initial, decay } => Ok(initial * decay.powi(k.min(i32::MAX as usize) as i32)),
    }
}

/// One row of a [`Trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub f: f64,
    /// Damping used at this iterate (`None` for GD).
    pub eta: Option<f64>,
    /// Step taken from this iterate (`None` when no step followed).
    pub alpha: Option<f64>,
    pub grad_fro: f64,
    /// `||grad||_P*` under the method's metric; Frobenius for GD.
    pub grad_dual_p: Option<f64>,
    pub lambda_min_gram: f64,
    pub err_fro: Option<f64>,
    pub sin_theta_rstar: Option<f64>,
    pub pl_ratio: Option<f64>,
    /// Nanoseconds since the start of the run.
    pub wall_ns: u64,
    pub flag: RecordFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFlag {
    Ok,
    /// Non-finite loss or iterate.
    Diverged,
    /// The preconditioner could not be factorized at this iterate.
    Singular,
}

impl RecordFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordFlag::Ok => "",
            RecordFlag::Diverged => "diverged",
            RecordFlag::Singular => "singular",
        }
    }

    pub fn is_failure(&self) -> bool {
        !matches!(self, RecordFlag::Ok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    TolF,
    TolError,
    /// Zero gradient under a Polyak step.
    Stationary,
    Diverged,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxIters => "max_iters",
            StopReason::TolF => "tol_f",
            StopReason::TolError => "tol_error",
            StopReason::Stationary => "stationary",
            StopReason::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    pub diverged: bool,
    pub divergence: Option<String>,
}

impl Trace {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Last finite error in the trace.
    pub fn final_error(&self) -> Option<f64> {
        self.records
            .iter()
            .rev()
            .filter(|r| !r.flag.is_failure())
            .find_map(|r| r.err_fro.filter(|e| e.is_finite()))
    }

    /// First iteration at which the error drops to `threshold` or below.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.err_fro.is_some_and(|e| e <= threshold))
            .map(|r| r.k)
    }

    /// True when the loss increases at some iteration after the error first
    /// reaches `threshold`.
    pub fn nonmonotone_after(&self, threshold: f64) -> bool {
        let Some(start) = self.records.iter().position(|r| r.err_fro.is_some_and(|e| e <= threshold)) else {
            return false;
        };
        self.records[start..].windows(2).any(|w| !(w[1].f <= w[0].f))
    }

    /// Same records ignoring wall-clock timings.
    pub fn same_numbers(&self, other: &Trace) -> bool {
        self.records.len() == other.records.len()
            && self.stop == other.stop
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                let (mut a, mut b) = (a.clone(), b.clone());
                a.wall_ns = 0;
                b.wall_ns = 0;
                // NaN never equals itself; compare bit patterns
                format!("{a:?}") == format!("{b:?}")
            })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Trace,
    /// Selected iterate: argmin of `eta_k` for oracle / variance-proxy
    /// damping, otherwise the final finite iterate.
    pub best: Factor,
    pub best_k: usize,
}

fn loss_and_grad(instance: &ProblemInstance, loss: LossKind, x: &Factor) -> Result<(f64, Mat)> {
    match loss {
        LossKind::L2 => sensing::loss_and_grad_l2(instance.ensemble(), instance.y(), x),
        LossKind::Lp(p) => sensing::loss_and_grad_lp(instance.ensemble(), instance.y(), x, p),
    }
}

/// `(1/sqrt(c)) ||A(XX^T - M*)||`.
fn oracle_residual(instance: &ProblemInstance, x: &Factor) -> Result<Option<f64>> {
    let Some(truth) = instance.truth() else { return Ok(None) };
    let ens = instance.ensemble();
    let e = x.model() - truth.m_star();
    Ok(Some((ens.forward(&e)?.norm_squared() / ens.norm_const()).sqrt()))
}

/// Runs the configured method from `x0`, or from the spectral initializer
/// when `x0` is `None`.
///
/// Stops at `max_iters` steps, when `f <= tol_f`, or when the error reaches
/// `tol_error` (ground truth required). Non-finite values or a singular
/// preconditioner end the run with the trace marked diverged; that is
/// reported as data, not as an error. Only invalid configurations and
/// dimension mismatches return `Err`.
pub fn run(instance: &ProblemInstance, config: &SolverConfig, x0: Option<Factor>) -> Result<RunOutcome> {
    config.validate()?;
    if config.method == Method::PrecGd && config.damping == DampingSchedule::OracleResidual && instance.truth().is_none() {
        return Err(Error::Config("oracle damping requires the ground truth".into()));
    }
    let r = instance.search_rank();
    let mut x = match x0 {
        Some(x) => x,
        None => spectral_init(instance.ensemble(), instance.y(), r)?,
    };
    if x.n() != instance.n() || x.rank() != r {
        return Err(Error::dim("run", format!("{}x{}", instance.n(), r), format!("{}x{}", x.n(), x.rank())));
    }

    let schedule = config.effective_damping();
    let select_by_eta = config.method == Method::PrecGd && config.damping.uses_best_iterate();
    let start = Instant::now();
    let mut records = Vec::new();
    let mut stop = StopReason::MaxIters;
    let mut divergence = None;
    let mut best = (x.clone(), 0usize, f64::INFINITY);

    for k in 0..=config.max_iters {
        let (f, grad) = loss_and_grad(instance, config.loss, &x)?;
        let lambda_min_gram = lambda_min_sym(&x.gram());
        let err_fro = instance.truth().map(|t| factor_error(&x, t)).transpose()?;
        let mut rec = IterationRecord {
            k,
            f,
            eta: None,
            alpha: None,
            grad_fro: grad.norm(),
            grad_dual_p: None,
            lambda_min_gram,
            err_fro,
            sin_theta_rstar: None,
            pl_ratio: None,
            wall_ns: 0,
            flag: RecordFlag::Ok,
        };
        if !f.is_finite() || !all_finite(&grad) {
            rec.flag = RecordFlag::Diverged;
            rec.wall_ns = start.elapsed().as_nanos() as u64;
            records.push(rec);
            stop = StopReason::Diverged;
            divergence = Some(format!("non-finite loss or gradient at k = {k}"));
            break;
        }

        let eta = match &schedule {
            None => None,
            Some(s) => Some(damping(s, f, oracle_residual(instance, &x)?)?),
        };
        rec.eta = eta;
        let grad_dual = match eta {
            None => Ok(rec.grad_fro),
            Some(eta) => dual_p_norm(&x, eta, &grad),
        };
        let grad_dual = match grad_dual {
            Ok(v) => v,
            Err(Error::Singular { min_eig }) => {
                rec.flag = RecordFlag::Singular;
                rec.wall_ns = start.elapsed().as_nanos() as u64;
                records.push(rec);
                stop = StopReason::Diverged;
                divergence = Some(format!("singular preconditioner at k = {k} (min eigenvalue {min_eig:e})"));
                break;
            }
            Err(e) => return Err(e),
        };
        rec.grad_dual_p = Some(grad_dual);

        if config.record_diagnostics {
            if let Some(truth) = instance.truth() {
                if truth.r_star() <= r {
                    rec.sin_theta_rstar = analysis::sin_theta(&x, truth.m_star(), truth.r_star()).ok();
                }
            }
            if f > 0.0 {
                rec.pl_ratio = Some(grad_dual * grad_dual / f);
            }
        }

        let eta_key = if select_by_eta { eta.unwrap_or(f64::INFINITY) } else { 0.0 };
        // strict comparison keeps the earliest minimizer; without
        // eta-selection every finite iterate replaces the previous one
        if !select_by_eta || eta_key < best.2 {
            best = (x.clone(), k, eta_key);
        }

        let done = if f <= config.tol_f {
            Some(StopReason::TolF)
        } else if config.tol_error.is_some_and(|t| err_fro.is_some_and(|e| e <= t)) {
            Some(StopReason::TolError)
        } else if k == config.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if let Some(reason) = done {
            rec.wall_ns = start.elapsed().as_nanos() as u64;
            records.push(rec);
            stop = reason;
            break;
        }

        let alpha = match step_size(&config.step, f, grad_dual, k) {
            Ok(a) => a,
            Err(Error::Converged(_)) => {
                rec.wall_ns = start.elapsed().as_nanos() as u64;
                records.push(rec);
                stop = StopReason::Stationary;
                break;
            }
            Err(e) => return Err(e),
        };
        rec.alpha = Some(alpha);
        let next = step(config.method, &x, &grad, alpha, eta.unwrap_or(0.0));
        rec.wall_ns = start.elapsed().as_nanos() as u64;
        match next {
            Ok(nx) => {
                records.push(rec);
                x = nx;
            }
            Err(Error::Singular { min_eig }) => {
                rec.flag = RecordFlag::Singular;
                records.push(rec);
                stop = StopReason::Diverged;
                divergence = Some(format!("singular preconditioner at k = {k} (min eigenvalue {min_eig:e})"));
                break;
            }
            Err(Error::NonFinite(_)) => {
                rec.flag = RecordFlag::Diverged;
                records.push(rec);
                stop = StopReason::Diverged;
                divergence = Some(format!("non-finite iterate after step from k = {k}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let diverged = stop == StopReason::Diverged;
    Ok(RunOutcome {
        trace: Trace { records, stop, diverged, divergence },
        best: best.0,
        best_k: best.1,
    })
}
