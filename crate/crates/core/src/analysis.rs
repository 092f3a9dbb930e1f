//! Closed-form quantities behind the PrecGD convergence guarantees, so
//! each inequality can be checked numerically on concrete iterates.
//!
//! Conventions match [`crate::sensing`]: `f(X) = (1/c) ||A(XX^T) - y||^2`,
//! `E = XX^T - M*`, and `delta` is the RIP constant of the normalized
//! operator.

use std::fmt::Write as _;

use crate::linalg::{lambda_min_sym, sym_eigen_desc};
use crate::metric::{apply_inverse, dual_p_norm, p_norm};
use crate::model::{Factor, GroundTruth, ProblemInstance};
use crate::sensing::{estimate_delta, loss_and_grad_l2, MeasurementEnsemble};
use crate::{Error, Mat, Result, Vector};

/// Lipschitz-like constant `L_P(X, D)`:
///
/// ```text
/// 2(1+delta) [ 4 + (2 ||E||_F + 4 ||D||_P) / (lmin + eta) + (||D||_P / (lmin + eta))^2 ]
/// ```
///
/// with `lmin = lambda_min(X^T X)`.
pub fn lipschitz_lp(x: &Factor, d: &Mat, eta: f64, delta: f64, err_fro: f64) -> Result<f64> {
    let denom = lambda_min_sym(&x.gram()) + eta;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!("lambda_min(X^T X) + eta must be > 0, got {denom}")));
    }
    let dp = p_norm(x, eta, d)?;
    Ok(2.0 * (1.0 + delta) * (4.0 + (2.0 * err_fro + 4.0 * dp) / denom + (dp / denom).powi(2)))
}

/// Gradient-dominance constant
///
/// ```text
/// (sqrt((1+delta^2)/2) - delta)^2
///   * min{ (1 + C_ub/(sqrt2 - 1))^-1, (1 + 3 C_ub sqrt((r - r*)/(1 - delta^2)))^-1 }
/// ```
///
/// The first term of the minimum carries the `1 +` that the proof needs;
/// dropping it gives a constant larger by up to a factor `1 + (sqrt2-1)/C_ub`.
pub fn mu_p(delta: f64, c_ub: f64, r: usize, r_star: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Domain(format!("delta must lie in [0, 1), got {delta}")));
    }
    if !(c_ub > 0.0) || !c_ub.is_finite() {
        return Err(Error::Domain(format!("C_ub must be finite and > 0, got {c_ub}")));
    }
    if r < r_star {
        return Err(Error::Domain(format!("search rank {r} below true rank {r_star}")));
    }
    let lead = ((1.0 + delta * delta) / 2.0).sqrt() - delta;
    let first = 1.0 / (1.0 + c_ub / (2f64.sqrt() - 1.0));
    let second = 1.0 / (1.0 + 3.0 * c_ub * ((r - r_star) as f64 / (1.0 - delta * delta)).sqrt());
    Ok(lead * lead * first.min(second))
}

/// `sin(theta_k)` for every `k = 1..=r`:
/// `||(I - U_k U_k^T) E (I - U_k U_k^T)||_F / ||E||_F`, where `U_k` holds the
/// top-`k` eigenvectors of `XX^T`. Returns the eigenvalues `lambda_1..r` of
/// `XX^T` alongside.
pub fn sin_thetas(x: &Factor, m_star: &Mat) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.n();
    if m_star.nrows() != n || m_star.ncols() != n {
        return Err(Error::dim("sin_theta", format!("{n}x{n}"), format!("{}x{}", m_star.nrows(), m_star.ncols())));
    }
    let e = x.model() - m_star;
    let en = e.norm();
    if en == 0.0 {
        return Err(Error::Converged("sin(theta)"));
    }
    let eig = sym_eigen_desc(&x.model());
    let mut sins = Vec::with_capacity(x.rank());
    let mut proj = Mat::identity(n, n);
    for k in 0..x.rank() {
        let u = eig.vectors.column(k);
        proj -= &u * u.transpose();
        let s = (&proj * &e * &proj).norm() / en;
        sins.push(s.clamp(0.0, 1.0));
    }
    let lambdas = eig.values.iter().take(x.rank()).copied().collect();
    Ok((sins, lambdas))
}

/// `sin(theta_k)` for a single `k` in `1..=r`.
pub fn sin_theta(x: &Factor, m_star: &Mat, k: usize) -> Result<f64> {
    if k == 0 || k > x.rank() {
        return Err(Error::Domain(format!("k must lie in 1..={}, got {k}", x.rank())));
    }
    Ok(sin_thetas(x, m_star)?.0[k - 1])
}

/// Lower bound on `||grad f||_P*^2`:
/// `max_k 2 (cos theta_k - delta)_+^2 / (1 + eta / lambda_k) * ||E||_F^2`.
pub fn gradient_lower_bound(x: &Factor, m_star: &Mat, eta: f64, delta: f64) -> Result<f64> {
    let (sins, lambdas) = sin_thetas(x, m_star)?;
    let e2 = (x.model() - m_star).norm_squared();
    let mut best = 0.0f64;
    for (s, lam) in sins.iter().zip(&lambdas) {
        let cos = (1.0 - s * s).max(0.0).sqrt();
        let gap = (cos - delta).max(0.0);
        let shrink = if eta == 0.0 {
            1.0
        } else if *lam > 0.0 {
            1.0 + eta / lam
        } else {
            f64::INFINITY
        };
        best = best.max(2.0 * gap * gap / shrink * e2);
    }
    Ok(best)
}

/// `||Z^T (I - U_k U_k^T) Z||_F / ||XX^T - ZZ^T||_F` for `r* <= k <= r`.
pub fn basis_alignment_ratio(x: &Factor, z: &Mat, k: usize) -> Result<f64> {
    let n = x.n();
    if z.nrows() != n {
        return Err(Error::dim("basis_alignment_ratio", n, z.nrows()));
    }
    if k < z.ncols() || k > x.rank() {
        return Err(Error::Domain(format!("k must lie in {}..={}, got {k}", z.ncols(), x.rank())));
    }
    let en = (x.model() - z * z.transpose()).norm();
    if en == 0.0 {
        return Err(Error::Converged("basis alignment ratio"));
    }
    let eig = sym_eigen_desc(&x.model());
    let uk = eig.vectors.columns(0, k);
    let proj = Mat::identity(n, n) - &uk * uk.transpose();
    Ok((z.transpose() * proj * z).norm() / en)
}

/// Root-sum-of-squares of the `r` largest singular values of `H`.
pub fn restricted_frobenius(h: &Mat, r: usize) -> Result<f64> {
    let n = h.nrows().min(h.ncols());
    if r == 0 || r > n {
        return Err(Error::Domain(format!("r must lie in 1..={n}, got {r}")));
    }
    let mut sv: Vec<f64> = h.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv.iter().take(r).map(|s| s * s).sum::<f64>().sqrt())
}

/// Empirical gradient-dominance ratio `||grad f||_P*^2 / f(X)` for the l2 loss.
pub fn pl_ratio(ensemble: &MeasurementEnsemble, y: &Vector, x: &Factor, eta: f64) -> Result<f64> {
    let (f, g) = loss_and_grad_l2(ensemble, y, x)?;
    if f == 0.0 {
        return Err(Error::Converged("gradient-dominance ratio"));
    }
    let d = dual_p_norm(x, eta, &g)?;
    Ok(d * d / f)
}

/// Strict radius test `(1/c) ||A(X0 X0^T - M*)||^2 < rho^2 (1 - delta) lambda_{r*}(M*)^2`.
pub fn radius_check(ensemble: &MeasurementEnsemble, truth: &GroundTruth, x0: &Factor, rho: f64, delta: f64) -> Result<bool> {
    if x0.n() != truth.n() {
        return Err(Error::dim("radius_check", truth.n(), x0.n()));
    }
    let lhs = ensemble.forward(&(x0.model() - truth.m_star()))?.norm_squared() / ensemble.norm_const();
    let lam = truth.lambda_r_star();
    Ok(lhs < rho * rho * (1.0 - delta) * lam * lam)
}

/// Inputs for [`diagnose`] that are not part of the instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnoseOptions {
    /// Damping for the metric; defaults to `sqrt(f)`.
    pub eta: Option<f64>,
    /// RIP constant; estimated by Monte Carlo when absent.
    pub delta: Option<f64>,
    pub rho: f64,
    pub c_ub: f64,
    pub delta_trials: usize,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions { eta: None, delta: None, rho: 0.5, c_ub: 1.0, delta_trials: 100, seed: 0 }
    }
}

/// Snapshot of the metric diagnostics at one iterate. `None` marks values
/// that need the ground truth (or are undefined at zero error).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub f: f64,
    pub eta: f64,
    pub delta_hat: f64,
    pub mu_p: Option<f64>,
    pub l_p: Option<f64>,
    pub pl_ratio: Option<f64>,
    pub err_fro: Option<f64>,
    pub sin_theta: Option<Vec<f64>>,
    /// Eigenvalues of `X^T X`, descending.
    pub lambda_spectrum: Vec<f64>,
    pub radius_ok: Option<bool>,
}

pub fn diagnose(instance: &ProblemInstance, x: &Factor, opts: &DiagnoseOptions) -> Result<DiagnosticsReport> {
    let ens = instance.ensemble();
    let (f, g) = loss_and_grad_l2(ens, instance.y(), x)?;
    let eta = opts.eta.unwrap_or_else(|| f.max(0.0).sqrt());
    let delta_hat = match opts.delta {
        Some(d) => d,
        None => estimate_delta(ens, x.rank(), opts.delta_trials.max(1), opts.seed)?,
    };
    let lambda_spectrum = sym_eigen_desc(&x.gram()).values.iter().copied().collect();
    let dual = dual_p_norm(x, eta, &g).ok();
    let pl = dual.filter(|_| f > 0.0).map(|d| d * d / f);

    let truth = instance.truth();
    let err_fro = truth.map(|t| (x.model() - t.m_star()).norm());
    let mu = match truth {
        Some(t) if delta_hat < 1.0 => mu_p(delta_hat, opts.c_ub, x.rank(), t.r_star()).ok(),
        _ => None,
    };
    let l_p = match err_fro {
        Some(e) => apply_inverse(x, eta, &g)
            .ok()
            .and_then(|d| lipschitz_lp(x, &d, eta, delta_hat, e).ok()),
        None => None,
    };
    let sin_theta = truth.and_then(|t| sin_thetas(x, t.m_star()).ok().map(|s| s.0));
    let radius_ok = truth
        .map(|t| radius_check(ens, t, x, opts.rho, delta_hat.min(1.0)))
        .transpose()?;

    Ok(DiagnosticsReport {
        f,
        eta,
        delta_hat,
        mu_p: mu,
        l_p,
        pl_ratio: pl,
        err_fro,
        sin_theta,
        lambda_spectrum,
        radius_ok,
    })
}

impl DiagnosticsReport {
    /// Flat `key=value` lines; vectors are comma separated and missing
    /// values print as `unavailable`.
    pub fn to_kv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "unavailable".to_string(), |v| format!("{v:e}"))
        }
        fn list(v: &[f64]) -> String {
            v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
        }
        let mut s = String::new();
        let _ = writeln!(s, "f={:e}", self.f);
        let _ = writeln!(s, "eta={:e}", self.eta);
        let _ = writeln!(s, "delta_hat={:e}", self.delta_hat);
        let _ = writeln!(s, "mu_p={}", opt(self.mu_p));
        let _ = writeln!(s, "l_p={}", opt(self.l_p));
        let _ = writeln!(s, "pl_ratio={}", opt(self.pl_ratio));
        let _ = writeln!(s, "err_fro={}", opt(self.err_fro));
        let sin = match (&self.sin_theta, self.err_fro) {
            (Some(v), _) => list(v),
            (None, Some(0.0)) => "converged".to_string(),
            _ => "unavailable".to_string(),
        };
        let _ = writeln!(s, "sin_theta={sin}");
        let _ = writeln!(s, "lambda_spectrum={}", list(&self.lambda_spectrum));
        let radius = self.radius_ok.map_or("unavailable".to_string(), |b| b.to_string());
        let _ = writeln!(s, "radius_ok={radius}");
        s
    }
}
