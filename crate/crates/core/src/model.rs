//! Core domain types and synthetic ground-truth generation.

use crate::linalg::{outer_gram, sym_eigen_desc};
use crate::rng::{gaussian_matrix, seeded};
use crate::sensing::{MeasurementEnsemble, Observations};
use crate::{Error, Mat, Result, Vector};

/// The `n x r` factor `X` of the model `XX^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor(Mat);

impl Factor {
    pub fn new(data: Mat) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::dim("Factor::new", "n >= 1 and r >= 1", format!("{}x{}", data.nrows(), data.ncols())));
        }
        if !crate::linalg::all_finite(&data) {
            return Err(Error::NonFinite("Factor::new"));
        }
        Ok(Factor(data))
    }

    /// `n x r` zero factor.
    pub fn zeros(n: usize, r: usize) -> Result<Self> {
        Factor::new(Mat::zeros(n, r))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    /// Search rank `r` (number of columns).
    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    /// `X X^T`.
    pub fn model(&self) -> Mat {
        outer_gram(&self.0)
    }

    /// `X^T X`.
    pub fn gram(&self) -> Mat {
        self.0.transpose() * &self.0
    }
}

/// Rank-`r*` PSD ground truth `M* = Z Z^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    z: Mat,
    m_star: Mat,
    kappa: f64,
    spectrum: Vector,
}

impl GroundTruth {
    /// Builds the ground truth from a given factor `Z` (`n x r*`).
    pub fn from_factor(z: Mat) -> Result<Self> {
        if z.nrows() == 0 || z.ncols() == 0 {
            return Err(Error::dim("GroundTruth::from_factor", "n >= 1 and r* >= 1", format!("{}x{}", z.nrows(), z.ncols())));
        }
        if z.ncols() > z.nrows() {
            return Err(Error::dim("GroundTruth::from_factor", format!("r* <= n = {}", z.nrows()), z.ncols()));
        }
        if !crate::linalg::all_finite(&z) {
            return Err(Error::NonFinite("GroundTruth::from_factor"));
        }
        let m_star = outer_gram(&z);
        let spectrum = sym_eigen_desc(&m_star).values;
        let r_star = z.ncols();
        if spectrum[r_star - 1] <= 0.0 {
            return Err(Error::Domain("ground-truth factor is rank deficient".into()));
        }
        let kappa = spectrum[0] / spectrum[r_star - 1];
        Ok(GroundTruth { z, m_star, kappa, spectrum })
    }

    pub fn z(&self) -> &Mat {
        &self.z
    }

    pub fn m_star(&self) -> &Mat {
        &self.m_star
    }

    /// `lambda_1(M*) / lambda_{r*}(M*)`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// All `n` eigenvalues of `M*`, descending.
    pub fn spectrum(&self) -> &Vector {
        &self.spectrum
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn r_star(&self) -> usize {
        self.z.ncols()
    }

    /// `lambda_{r*}(M*)`, the smallest nonzero eigenvalue.
    pub fn lambda_r_star(&self) -> f64 {
        self.spectrum[self.r_star() - 1]
    }
}

fn gram_ratio(z: &Mat, scale: f64) -> f64 {
    let mut zs = z.clone();
    let last = zs.ncols() - 1;
    zs.column_mut(last).scale_mut(scale);
    let ev = sym_eigen_desc(&(zs.transpose() * &zs)).values;
    let min = ev[ev.len() - 1];
    // below roundoff the ratio is meaningless; treat as unbounded
    if min <= 1e-13 * ev[0] {
        return f64::INFINITY;
    }
    ev[0] / min
}

/// Samples `Z` with i.i.d. standard Gaussian entries and rescales its last
/// column so that `lambda_1(M*) / lambda_{r*}(M*) = kappa`.
///
/// The rescale factor `s` is found by bisection in `ln s`. Shrinking the
/// last column drives `lambda_{r*}` to zero, so the ratio is unbounded as
/// `s -> 0`; the root is taken on that branch. Ratios below the smallest
/// value reachable by rescaling a given draw (for instance `kappa = 1` with
/// `r* >= 2`) cause that draw to be rejected and `Z` to be resampled from
/// the same stream; after 1000 rejected draws the request fails.
pub fn make_ground_truth(n: usize, r_star: usize, kappa: f64, seed: u64) -> Result<GroundTruth> {
    if n == 0 || r_star == 0 || r_star > n {
        return Err(Error::dim("make_ground_truth", format!("1 <= r_star <= n = {n}"), r_star));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("kappa must be a finite value >= 1, got {kappa}")));
    }
    let mut rng = seeded(seed);
    if r_star == 1 {
        if kappa != 1.0 {
            return Err(Error::Domain(format!("rank-1 ground truth has kappa = 1, requested {kappa}")));
        }
        return GroundTruth::from_factor(gaussian_matrix(&mut rng, n, 1));
    }
    // Draws whose reachable ratio range excludes kappa are rejected and
    // redrawn from the same stream.
    let mut last_err = None;
    for _ in 0..MAX_DRAWS {
        let mut z = gaussian_matrix(&mut rng, n, r_star);
        match last_column_scale(&z, kappa) {
            Ok(s) => {
                z.column_mut(r_star - 1).scale_mut(s);
                return GroundTruth::from_factor(z);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Domain("no admissible draw".into())))
}

const MAX_DRAWS: usize = 1000;

/// Scale `s` for the last column of `z` giving Gram ratio `kappa`.
fn last_column_scale(z: &Mat, kappa: f64) -> Result<f64> {
    // Scan ln(s) upward for the first point with ratio <= kappa.
    const LN_MIN: f64 = -20.0;
    const LN_STEP: f64 = 0.25;
    let ratio = |ln_s: f64| gram_ratio(z, ln_s.exp());
    let mut prev = LN_MIN;
    let mut bracket = None;
    let mut best = (f64::INFINITY, LN_MIN);
    let mut ln_s = LN_MIN + LN_STEP;
    while ln_s <= 20.0 {
        let q = ratio(ln_s);
        if q < best.0 {
            best = (q, ln_s);
        }
        if q <= kappa {
            bracket = Some((prev, ln_s));
            break;
        }
        prev = ln_s;
        ln_s += LN_STEP;
    }
    let (mut lo, mut hi) = match bracket {
        Some(b) => b,
        None => {
            // refine the minimum; kappa may sit just below the coarse grid
            let (mut a, mut b) = (best.1 - LN_STEP, best.1 + LN_STEP);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..200 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if ratio(c) < ratio(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            let m = 0.5 * (a + b);
            if ratio(m) > kappa {
                return Err(Error::Domain(format!(
                    "kappa = {kappa} is below the smallest ratio {:.6} reachable by rescaling the last column",
                    ratio(m)
                )));
            }
            (best.1 - LN_STEP, m)
        }
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ratio(mid) > kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ln_s = if (ratio(lo) - kappa).abs() < (ratio(hi) - kappa).abs() { lo } else { hi };
    Ok(ln_s.exp())
}

/// `||XX^T - M*||_F`.
pub fn factor_error(x: &Factor, truth: &GroundTruth) -> Result<f64> {
    if x.n() != truth.n() {
        return Err(Error::dim("factor_error", truth.n(), x.n()));
    }
    Ok((x.model() - truth.m_star()).norm())
}

/// Everything a solver run needs: measurements, observations, the search
/// rank and (for synthetic problems) the ground truth.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    ensemble: MeasurementEnsemble,
    observations: Observations,
    truth: Option<GroundTruth>,
    search_rank: usize,
}

impl ProblemInstance {
    pub fn new(
        ensemble: MeasurementEnsemble,
        observations: Observations,
        truth: Option<GroundTruth>,
        search_rank: usize,
    ) -> Result<Self> {
        if search_rank == 0 || search_rank > ensemble.n() {
            return Err(Error::dim("ProblemInstance::new", format!("1 <= r <= n = {}", ensemble.n()), search_rank));
        }
        if observations.y().len() != ensemble.m() {
            return Err(Error::dim("ProblemInstance::new", ensemble.m(), observations.y().len()));
        }
        if let Some(t) = &truth {
            if t.n() != ensemble.n() {
                return Err(Error::dim("ProblemInstance::new", ensemble.n(), t.n()));
            }
        }
        Ok(ProblemInstance { ensemble, observations, truth, search_rank })
    }

    pub fn ensemble(&self) -> &MeasurementEnsemble {
        &self.ensemble
    }

    pub fn observations(&self) -> &Observations {
        &self.observations
    }

    pub fn y(&self) -> &Vector {
        self.observations.y()
    }

    pub fn truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }

    pub fn search_rank(&self) -> usize {
        self.search_rank
    }

    pub fn n(&self) -> usize {
        self.ensemble.n()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_has_unit_kappa() {
        let t = make_ground_truth(4, 1, 1.0, 0).unwrap();
        assert_eq!(t.kappa(), 1.0);
        assert!(t.spectrum()[1].abs() <= 1e-10 * t.spectrum()[0]);
    }

    #[test]
    fn kappa_hundred_is_exact() {
        let t = make_ground_truth(10, 2, 100.0, 7).unwrap();
        // independent check on the full n x n eigendecomposition
        let ev = sym_eigen_desc(&(t.z() * t.z().transpose())).values;
        assert!((ev[0] / ev[1] / 100.0 - 1.0).abs() < 1e-6);
        assert!((t.kappa() / 100.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rank_two_spectrum() {
        let t = make_ground_truth(4, 2, 10.0, 1).unwrap();
        let s = t.spectrum();
        assert!(s[1] > 0.0);
        assert!(s[2].abs() <= 1e-10 * s[0]);
        assert!((t.kappa() / 10.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_rank_allowed() {
        let t = make_ground_truth(3, 3, 5.0, 2).unwrap();
        assert!((t.kappa() / 5.0 - 1.0).abs() < 1e-9, "{}", t.kappa());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(make_ground_truth(3, 4, 2.0, 0), Err(Error::Dimension { .. })));
        assert!(matches!(make_ground_truth(3, 2, 0.5, 0), Err(Error::Domain(_))));
        assert!(matches!(make_ground_truth(3, 2, f64::NAN, 0), Err(Error::Domain(_))));
        assert!(matches!(make_ground_truth(3, 1, 2.0, 0), Err(Error::Domain(_))));
        assert!(matches!(make_ground_truth(3, 2, 1.0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn deterministic_in_seed() {
        let a = make_ground_truth(6, 3, 20.0, 42).unwrap();
        let b = make_ground_truth(6, 3, 20.0, 42).unwrap();
        assert_eq!(a.z(), b.z());
        let c = make_ground_truth(6, 3, 20.0, 43).unwrap();
        assert_ne!(a.z(), c.z());
    }

    #[test]
    fn factor_error_counterexample_point() {
        let truth = GroundTruth::from_factor(Mat::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let x = Factor::new(Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.5]))).unwrap();
        assert!((factor_error(&x, &truth).unwrap() - 0.25).abs() < 1e-15);
        let exact = Factor::new(Mat::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(factor_error(&exact, &truth).unwrap(), 0.0);
    }

    #[test]
    fn factor_error_matches_double_loop() {
        let mut rng = seeded(3);
        let x = Factor::new(gaussian_matrix(&mut rng, 5, 3)).unwrap();
        let truth = make_ground_truth(5, 2, 3.0, 9).unwrap();
        let (xm, ms) = (x.as_mat(), truth.m_star());
        let mut acc = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let mut xx = 0.0;
                for k in 0..3 {
                    xx += xm[(i, k)] * xm[(j, k)];
                }
                acc += (xx - ms[(i, j)]).powi(2);
            }
        }
        let got = factor_error(&x, &truth).unwrap();
        assert!((got - acc.sqrt()).abs() <= 1e-12 * acc.sqrt());
    }

    #[test]
    fn factor_error_dimension_mismatch() {
        let truth = make_ground_truth(4, 2, 2.0, 0).unwrap();
        let x = Factor::zeros(3, 2).unwrap();
        assert!(matches!(factor_error(&x, &truth), Err(Error::Dimension { .. })));
    }

    #[test]
    fn factor_rejects_nonfinite() {
        let m = Mat::from_element(2, 1, f64::NAN);
        assert!(matches!(Factor::new(m), Err(Error::NonFinite(_))));
        assert!(Factor::new(Mat::zeros(0, 1)).is_err());
    }
}
