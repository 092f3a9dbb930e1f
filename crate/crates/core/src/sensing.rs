//! Linear measurement operators, observations and empirical losses.
//!
//! Losses are normalized by a per-ensemble constant `c` (see
//! [`Normalization`]): `f(X) = (1/c) ||y - A(XX^T)||^2` with gradient
//! `(4/c) A*(A(XX^T) - y) X`, and every quantity built on `f` (damping,
//! spectral initialization, radius check) uses the same `c`.

use rand_distr::{Distribution, Normal};

use crate::linalg::{symmetrize, unvec_col, vec_col};
use crate::model::{Factor, GroundTruth};
use crate::rng::{gaussian_matrix, seeded};
use crate::{Error, Mat, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    /// `A(M) = vec(M)`, `m = n^2`.
    Identity,
    /// `A_i = (G_i + G_i^T) / 2` with `G_i` i.i.d. standard Gaussian.
    GaussianSym,
    /// User supplied matrices, symmetrized on construction.
    Custom,
}

/// Normalization constant `c` applied to squared residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `c = m`.
    Count,
    /// `c = 1`.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    kind: EnsembleKind,
    n: usize,
    m: usize,
    /// `m x n^2`, row `i` is `vec(A_i)`. `None` for the identity operator.
    rows: Option<Mat>,
    normalization: Normalization,
}

impl MeasurementEnsemble {
    /// Identity operator on `n x n` matrices. Defaults to unit normalization,
    /// under which it is an exact isometry.
    pub fn identity(n: usize) -> Self {
        MeasurementEnsemble {
            kind: EnsembleKind::Identity,
            n,
            m: n * n,
            rows: None,
            normalization: Normalization::Unit,
        }
    }

    /// `m` symmetrized Gaussian matrices. With count normalization,
    /// `E[(1/m)||A(M)||^2] = ||M||_F^2` for symmetric `M`.
    pub fn gaussian(n: usize, m: usize, seed: u64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::dim("MeasurementEnsemble::gaussian", "n >= 1 and m >= 1", format!("n={n}, m={m}")));
        }
        let mut rng = seeded(seed);
        let mut rows = Mat::zeros(m, n * n);
        for i in 0..m {
            let a = symmetrize(&gaussian_matrix(&mut rng, n, n));
            rows.set_row(i, &vec_col(&a).transpose());
        }
        Ok(MeasurementEnsemble {
            kind: EnsembleKind::GaussianSym,
            n,
            m,
            rows: Some(rows),
            normalization: Normalization::Count,
        })
    }

    /// Ensemble from explicit `n x n` matrices, each replaced by its
    /// symmetric part.
    pub fn custom(matrices: &[Mat]) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::dim("MeasurementEnsemble::custom", "m >= 1", 0))?;
        let n = first.nrows();
        if n == 0 {
            return Err(Error::dim("MeasurementEnsemble::custom", "n >= 1", 0));
        }
        let mut rows = Mat::zeros(matrices.len(), n * n);
        for (i, a) in matrices.iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::dim("MeasurementEnsemble::custom", format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
            }
            if !crate::linalg::all_finite(a) {
                return Err(Error::NonFinite("MeasurementEnsemble::custom"));
            }
            rows.set_row(i, &vec_col(&symmetrize(a)).transpose());
        }
        Ok(MeasurementEnsemble {
            kind: EnsembleKind::Custom,
            n,
            m: matrices.len(),
            rows: Some(rows),
            normalization: Normalization::Count,
        })
    }

    /// Rebuilds an ensemble from its stored rows without re-symmetrizing.
    pub(crate) fn from_rows(kind: EnsembleKind, n: usize, rows: Mat, normalization: Normalization) -> Self {
        MeasurementEnsemble { kind, n, m: rows.nrows(), rows: Some(rows), normalization }
    }

    pub(crate) fn rows(&self) -> Option<&Mat> {
        self.rows.as_ref()
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// The constant `c` dividing squared residual norms.
    pub fn norm_const(&self) -> f64 {
        match self.normalization {
            Normalization::Count => self.m as f64,
            Normalization::Unit => 1.0,
        }
    }

    /// The `i`-th (symmetric) measurement matrix.
    pub fn matrix(&self, i: usize) -> Result<Mat> {
        if i >= self.m {
            return Err(Error::dim("MeasurementEnsemble::matrix", format!("index < {}", self.m), i));
        }
        Ok(match &self.rows {
            Some(rows) => unvec_col(&rows.row(i).transpose(), self.n),
            None => {
                let mut e = Mat::zeros(self.n, self.n);
                e[(i % self.n, i / self.n)] = 1.0;
                e
            }
        })
    }

    fn check_square(&self, m: &Mat, context: &'static str) -> Result<()> {
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(Error::dim(context, format!("{0}x{0}", self.n), format!("{}x{}", m.nrows(), m.ncols())));
        }
        Ok(())
    }

    /// `A(M)_i = <A_i, M>`.
    pub fn forward(&self, m: &Mat) -> Result<Vector> {
        self.check_square(m, "forward")?;
        Ok(match &self.rows {
            Some(rows) => rows * vec_col(m),
            None => vec_col(m),
        })
    }

    /// `A*(v) = sum_i v_i A_i`.
    pub fn adjoint(&self, v: &Vector) -> Result<Mat> {
        if v.len() != self.m {
            return Err(Error::dim("adjoint", self.m, v.len()));
        }
        let flat = match &self.rows {
            Some(rows) => rows.tr_mul(v),
            None => v.clone(),
        };
        Ok(symmetrize(&unvec_col(&flat, self.n)))
    }

    fn check_factor(&self, x: &Factor, context: &'static str) -> Result<()> {
        if x.n() != self.n {
            return Err(Error::dim(context, self.n, x.n()));
        }
        Ok(())
    }

    fn check_y(&self, y: &Vector, context: &'static str) -> Result<()> {
        if y.len() != self.m {
            return Err(Error::dim(context, self.m, y.len()));
        }
        Ok(())
    }

    /// `A(XX^T) - y`.
    pub fn residual(&self, y: &Vector, x: &Factor) -> Result<Vector> {
        self.check_factor(x, "residual")?;
        self.check_y(y, "residual")?;
        Ok(self.forward(&x.model())? - y)
    }
}

/// Measurements `y = A(M*) + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    y: Vector,
    sigma2: f64,
    noise_seed: u64,
}

impl Observations {
    pub fn new(y: Vector, sigma2: f64, noise_seed: u64) -> Result<Self> {
        if !(sigma2 >= 0.0) {
            return Err(Error::Domain(format!("noise variance must be >= 0, got {sigma2}")));
        }
        Ok(Observations { y, sigma2, noise_seed })
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }
}

/// `y = A(M*) + eps` with `eps_i` i.i.d. `N(0, sigma^2)`.
pub fn observe(ensemble: &MeasurementEnsemble, truth: &GroundTruth, sigma: f64, seed: u64) -> Result<Observations> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let mut y = ensemble.forward(truth.m_star())?;
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
        let mut rng = seeded(seed);
        for v in y.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Observations::new(y, sigma * sigma, seed)
}

/// `(1/c) ||y - A(XX^T)||^2`.
pub fn loss_l2(ensemble: &MeasurementEnsemble, y: &Vector, x: &Factor) -> Result<f64> {
    let r = ensemble.residual(y, x)?;
    Ok(r.norm_squared() / ensemble.norm_const())
}

/// `(4/c) A*(A(XX^T) - y) X`.
pub fn grad_l2(ensemble: &MeasurementEnsemble, y: &Vector, x: &Factor) -> Result<Mat> {
    Ok(loss_and_grad_l2(ensemble, y, x)?.1)
}

/// Loss and gradient sharing one forward evaluation.
pub fn loss_and_grad_l2(ensemble: &MeasurementEnsemble, y: &Vector, x: &Factor) -> Result<(f64, Mat)> {
    let r = ensemble.residual(y, x)?;
    let c = ensemble.norm_const();
    let g = ensemble.adjoint(&r)? * x.as_mat() * (4.0 / c);
    Ok((r.norm_squared() / c, g))
}

fn check_p(p: f64) -> Result<()> {
    if !(1.0..2.0).contains(&p) {
        return Err(Error::Domain(format!("l_p exponent must lie in [1, 2), got {p}")));
    }
    Ok(())
}

/// `sum_i |<A_i, XX^T> - y_i|^p` (no normalization). With noiseless `y` the
/// residuals are `<A_i, XX^T - M*>`.
pub fn loss_lp(ensemble: &MeasurementEnsemble, y: &Vector, x: &Factor, p: f64) -> Result<f64> {
    check_p(p)?;
    loss_lp_any(ensemble, y, x, p)
}

/// Subgradient `2 sum_i p sign(e_i) |e_i|^(p-1) A_i X`, taking 0 where
/// `e_i = 0`.
pub fn grad_lp(ensemble: &MeasurementEnsemble, y: &Vector, x: &Factor, p: f64) -> Result<Mat> {
    check_p(p)?;
    Ok(loss_and_grad_lp_any(ensemble, y, x, p)?.1)
}

pub fn loss_and_grad_lp(ensemble: &MeasurementEnsemble, y: &Vector, x: &Factor, p: f64) -> Result<(f64, Mat)> {
    check_p(p)?;
    loss_and_grad_lp_any(ensemble, y, x, p)
}

pub(crate) fn loss_lp_any(ensemble: &MeasurementEnsemble, y: &Vector, x: &Factor, p: f64) -> Result<f64> {
    let e = ensemble.residual(y, x)?;
    Ok(e.iter().map(|v| v.abs().powf(p)).sum())
}

pub(crate) fn loss_and_grad_lp_any(ensemble: &MeasurementEnsemble, y: &Vector, x: &Factor, p: f64) -> Result<(f64, Mat)> {
    let e = ensemble.residual(y, x)?;
    let f = e.iter().map(|v| v.abs().powf(p)).sum();
    let w = e.map(|v| if v == 0.0 { 0.0 } else { p * v.signum() * v.abs().powf(p - 1.0) });
    let g = ensemble.adjoint(&w)? * x.as_mat() * 2.0;
    Ok((f, g))
}

/// Monte Carlo lower bound on the RIP constant over rank-`2r` matrices:
/// the largest observed `|(1/c)||A(M)||^2 / ||M||_F^2 - 1|`.
pub fn estimate_delta(ensemble: &MeasurementEnsemble, r: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Domain("estimate_delta needs at least one trial".into()));
    }
    if r == 0 {
        return Err(Error::Domain("estimate_delta needs r >= 1".into()));
    }
    let n = ensemble.n();
    let k = (2 * r).min(n);
    let c = ensemble.norm_const();
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        // symmetric, rank k, indefinite
        let g = gaussian_matrix(&mut rng, n, k);
        let s = gaussian_matrix(&mut rng, k, 1);
        let m = &g * Mat::from_diagonal(&s.column(0).into_owned()) * g.transpose();
        let denom = m.norm_squared();
        if denom == 0.0 {
            continue;
        }
        let ratio = ensemble.forward(&m)?.norm_squared() / c / denom;
        worst = worst.max((ratio - 1.0).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inner;
    use crate::model::make_ground_truth;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(v))
    }

    fn counterexample() -> (MeasurementEnsemble, Vector, Factor) {
        let ens = MeasurementEnsemble::identity(2);
        let truth = GroundTruth::from_factor(Mat::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let y = observe(&ens, &truth, 0.0, 0).unwrap().y().clone();
        (ens, y, Factor::new(diag(&[1.0, 0.5])).unwrap())
    }

    #[test]
    fn identity_forward_is_vectorization() {
        let ens = MeasurementEnsemble::identity(2);
        assert_eq!(ens.forward(&diag(&[1.0, 2.0])).unwrap().as_slice(), &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(ens.forward(&Mat::zeros(2, 2)).unwrap().norm(), 0.0);
        assert_eq!(ens.m(), 4);
    }

    #[test]
    fn forward_matches_trace_loop() {
        let ens = MeasurementEnsemble::gaussian(4, 3, 11).unwrap();
        let mut rng = seeded(5);
        let m = symmetrize(&gaussian_matrix(&mut rng, 4, 4));
        let got = ens.forward(&m).unwrap();
        for i in 0..3 {
            let a = ens.matrix(i).unwrap();
            let mut acc = 0.0;
            for p in 0..4 {
                for q in 0..4 {
                    acc += a[(p, q)] * m[(p, q)];
                }
            }
            assert!((got[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn stored_matrices_are_symmetric() {
        let ens = MeasurementEnsemble::gaussian(5, 4, 1).unwrap();
        for i in 0..4 {
            let a = ens.matrix(i).unwrap();
            assert!((&a - a.transpose()).norm() <= 1e-12);
        }
    }

    #[test]
    fn adjoint_selects_and_vanishes() {
        let ens = MeasurementEnsemble::gaussian(3, 5, 2).unwrap();
        assert_eq!(ens.adjoint(&Vector::zeros(5)).unwrap().norm(), 0.0);
        let mut e1 = Vector::zeros(5);
        e1[0] = 1.0;
        assert!((ens.adjoint(&e1).unwrap() - ens.matrix(0).unwrap()).norm() < 1e-15);
        assert!(matches!(ens.adjoint(&Vector::zeros(4)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn adjointness_on_random_pairs() {
        for ens in [MeasurementEnsemble::gaussian(4, 9, 3).unwrap(), MeasurementEnsemble::identity(4)] {
            let mut rng = seeded(77);
            for _ in 0..100 {
                let m = symmetrize(&gaussian_matrix(&mut rng, 4, 4));
                let v = gaussian_matrix(&mut rng, ens.m(), 1).column(0).into_owned();
                let lhs = ens.forward(&m).unwrap().dot(&v);
                let rhs = inner(&ens.adjoint(&v).unwrap(), &m);
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn observe_noiseless_and_deterministic() {
        let truth = make_ground_truth(4, 2, 3.0, 0).unwrap();
        let ens = MeasurementEnsemble::gaussian(4, 20, 1).unwrap();
        let y0 = observe(&ens, &truth, 0.0, 9).unwrap();
        assert_eq!(y0.y(), &ens.forward(truth.m_star()).unwrap());
        let a = observe(&ens, &truth, 0.3, 9).unwrap();
        let b = observe(&ens, &truth, 0.3, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.sigma2() - 0.09).abs() < 1e-15);
        assert!(matches!(observe(&ens, &truth, -1.0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn observe_noise_variance_concentrates() {
        let truth = make_ground_truth(3, 1, 1.0, 0).unwrap();
        let ens = MeasurementEnsemble::gaussian(3, 10_000, 4).unwrap();
        let clean = ens.forward(truth.m_star()).unwrap();
        let mut inside = 0;
        for seed in 0..20 {
            let y = observe(&ens, &truth, 1.0, seed).unwrap();
            let v = (y.y() - &clean).norm_squared() / 1e4;
            if (0.95..=1.05).contains(&v) {
                inside += 1;
            }
        }
        // P(outside) ~ 4e-7 per draw
        assert_eq!(inside, 20);
    }

    #[test]
    fn l2_loss_on_counterexample() {
        let (ens, y, x) = counterexample();
        assert!((loss_l2(&ens, &y, &x).unwrap() - 0.0625).abs() < 1e-15);
        let counted = ens.clone().with_normalization(Normalization::Count);
        assert!((loss_l2(&counted, &y, &x).unwrap() - 0.015625).abs() < 1e-15);
    }

    #[test]
    fn l2_grad_on_counterexample() {
        let (ens, y, x) = counterexample();
        let g = grad_l2(&ens, &y, &x).unwrap();
        assert!((g - diag(&[0.0, 0.5])).norm() < 1e-15);
        // ||grad||^2 = 16 xi^2 f
        let f = loss_l2(&ens, &y, &x).unwrap();
        let gn = grad_l2(&ens, &y, &x).unwrap().norm_squared();
        assert!((gn - 16.0 * 0.25 * f).abs() < 1e-15);
        for xi in [0.1, 0.2, 0.4] {
            let x = Factor::new(diag(&[1.0, xi])).unwrap();
            let ratio = grad_l2(&ens, &y, &x).unwrap().norm_squared() / loss_l2(&ens, &y, &x).unwrap();
            assert!((ratio / (xi * xi) - 16.0).abs() < 1e-9);
        }
    }

    #[test]
    fn l2_zero_at_truth() {
        let truth = make_ground_truth(5, 2, 4.0, 2).unwrap();
        let ens = MeasurementEnsemble::gaussian(5, 40, 3).unwrap();
        let y = observe(&ens, &truth, 0.0, 0).unwrap().y().clone();
        let x = Factor::new(truth.z().clone()).unwrap();
        assert!(loss_l2(&ens, &y, &x).unwrap() < 1e-24);
        assert!(grad_l2(&ens, &y, &x).unwrap().norm() < 1e-10);
    }

    #[test]
    fn l2_matches_scalar_loop() {
        let ens = MeasurementEnsemble::gaussian(4, 15, 8).unwrap();
        let mut rng = seeded(1);
        let x = Factor::new(gaussian_matrix(&mut rng, 4, 2)).unwrap();
        let y = gaussian_matrix(&mut rng, 15, 1).column(0).into_owned();
        let xx = x.model();
        let mut acc = 0.0;
        for i in 0..15 {
            let a = ens.matrix(i).unwrap();
            let mut dot = 0.0;
            for p in 0..4 {
                for q in 0..4 {
                    dot += a[(p, q)] * xx[(p, q)];
                }
            }
            acc += (y[i] - dot).powi(2);
        }
        let got = loss_l2(&ens, &y, &x).unwrap();
        assert!((got - acc / 15.0).abs() <= 1e-12 * got);
    }

    fn finite_difference<F: Fn(&Factor) -> f64>(f: F, x: &Factor, h: f64) -> Mat {
        let mut g = Mat::zeros(x.n(), x.rank());
        for i in 0..x.n() {
            for j in 0..x.rank() {
                let mut xp = x.as_mat().clone();
                let mut xm = x.as_mat().clone();
                xp[(i, j)] += h;
                xm[(i, j)] -= h;
                g[(i, j)] = (f(&Factor::new(xp).unwrap()) - f(&Factor::new(xm).unwrap())) / (2.0 * h);
            }
        }
        g
    }

    #[test]
    fn l2_grad_matches_finite_differences() {
        let ens = MeasurementEnsemble::gaussian(5, 30, 2).unwrap();
        let mut rng = seeded(12);
        let x = Factor::new(gaussian_matrix(&mut rng, 5, 3)).unwrap();
        let y = gaussian_matrix(&mut rng, 30, 1).column(0).into_owned();
        let g = grad_l2(&ens, &y, &x).unwrap();
        let fd = finite_difference(|z| loss_l2(&ens, &y, z).unwrap(), &x, 1e-5);
        for (a, b) in g.iter().zip(fd.iter()) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn l2_grad_satisfies_directional_identity() {
        let ens = MeasurementEnsemble::gaussian(4, 20, 6).unwrap();
        let mut rng = seeded(21);
        let y = gaussian_matrix(&mut rng, 20, 1).column(0).into_owned();
        for _ in 0..50 {
            let x = Factor::new(gaussian_matrix(&mut rng, 4, 2)).unwrap();
            let d = gaussian_matrix(&mut rng, 4, 2);
            let lhs = inner(&grad_l2(&ens, &y, &x).unwrap(), &d);
            let sym = x.as_mat() * d.transpose() + &d * x.as_mat().transpose();
            let rhs = 2.0 / 20.0 * ens.forward(&sym).unwrap().dot(&ens.residual(&y, &x).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn lp_loss_values() {
        let ens = MeasurementEnsemble::identity(2);
        let x = Factor::zeros(2, 1).unwrap();
        assert_eq!(loss_lp(&ens, &Vector::zeros(4), &x, 1.0).unwrap(), 0.0);
        // residuals (3, -4, 0, 0)
        let y = Vector::from_vec(vec![-3.0, 4.0, 0.0, 0.0]);
        assert_eq!(loss_lp(&ens, &y, &x, 1.0).unwrap(), 7.0);
        assert!(matches!(loss_lp(&ens, &y, &x, 2.0), Err(Error::Domain(_))));
        assert!(matches!(loss_lp(&ens, &y, &x, 0.9), Err(Error::Domain(_))));
        assert!(matches!(grad_lp(&ens, &y, &x, 2.5), Err(Error::Domain(_))));
    }

    #[test]
    fn lp_loss_matches_scalar_loop() {
        let ens = MeasurementEnsemble::gaussian(4, 12, 3).unwrap();
        let mut rng = seeded(2);
        let x = Factor::new(gaussian_matrix(&mut rng, 4, 2)).unwrap();
        let y = gaussian_matrix(&mut rng, 12, 1).column(0).into_owned();
        let xx = x.model();
        let mut acc = 0.0;
        for i in 0..12 {
            let a = ens.matrix(i).unwrap();
            let dot: f64 = a.iter().zip(xx.iter()).map(|(u, v)| u * v).sum();
            acc += (dot - y[i]).abs().powf(1.4);
        }
        let got = loss_lp(&ens, &y, &x, 1.4).unwrap();
        assert!((got - acc).abs() <= 1e-12 * acc);
    }

    #[test]
    fn lp_grad_zero_residual_and_p2_limit() {
        let truth = make_ground_truth(4, 2, 2.0, 0).unwrap();
        let ens = MeasurementEnsemble::gaussian(4, 25, 5).unwrap();
        let y = observe(&ens, &truth, 0.0, 0).unwrap().y().clone();
        // exact zero residual only holds for the identity operator
        let id = MeasurementEnsemble::identity(4);
        let yid = id.forward(truth.m_star()).unwrap();
        let mut zpad = Mat::zeros(4, 3);
        zpad.columns_mut(0, 2).copy_from(truth.z());
        let xz = Factor::new(zpad).unwrap();
        let resid = id.residual(&yid, &xz).unwrap();
        let g = grad_lp(&id, &yid, &xz, 1.0).unwrap();
        if resid.iter().all(|v| *v == 0.0) {
            assert_eq!(g.norm(), 0.0);
        } else {
            assert!(g.norm() < 1e-12);
        }

        let mut rng = seeded(4);
        let x = Factor::new(gaussian_matrix(&mut rng, 4, 3)).unwrap();
        let unit = ens.clone().with_normalization(Normalization::Unit);
        let g2 = loss_and_grad_lp_any(&ens, &y, &x, 2.0).unwrap().1;
        let gl2 = grad_l2(&unit, &y, &x).unwrap();
        assert!((&g2 - &gl2).norm() <= 1e-12 * gl2.norm());
    }

    #[test]
    fn lp_grad_exact_zero_subgradient() {
        // y chosen so every residual is exactly zero at X = 0
        let ens = MeasurementEnsemble::gaussian(3, 6, 1).unwrap();
        let x = Factor::new(Mat::from_element(3, 2, 0.5)).unwrap();
        let y = ens.forward(&x.model()).unwrap();
        let g = grad_lp(&ens, &y, &x, 1.0).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn lp_grad_matches_finite_differences() {
        let ens = MeasurementEnsemble::gaussian(4, 20, 7).unwrap();
        let mut rng = seeded(30);
        let x = Factor::new(gaussian_matrix(&mut rng, 4, 2)).unwrap();
        let y = gaussian_matrix(&mut rng, 20, 1).column(0).into_owned();
        let e = ens.residual(&y, &x).unwrap();
        assert!(e.iter().all(|v| v.abs() > 1e-2), "test point too close to a kink");
        let g = grad_lp(&ens, &y, &x, 1.4).unwrap();
        let fd = finite_difference(|z| loss_lp(&ens, &y, z, 1.4).unwrap(), &x, 1e-6);
        for (a, b) in g.iter().zip(fd.iter()) {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn identity_is_isometry() {
        let ens = MeasurementEnsemble::identity(5);
        assert!(estimate_delta(&ens, 2, 50, 0).unwrap() < 1e-12);
        let mut rng = seeded(0);
        let m = symmetrize(&gaussian_matrix(&mut rng, 5, 5));
        assert!((ens.forward(&m).unwrap().norm_squared() - m.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_delta_small_with_many_measurements() {
        let (n, r) = (6, 1);
        let ens = MeasurementEnsemble::gaussian(n, 40 * n * r, 2).unwrap();
        let d = estimate_delta(&ens, r, 100, 3).unwrap();
        assert!(d < 0.5, "delta estimate {d}");
        assert!(d > 0.0);
        assert!(matches!(estimate_delta(&ens, r, 0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn custom_symmetrizes() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let ens = MeasurementEnsemble::custom(&[a]).unwrap();
        assert_eq!(ens.matrix(0).unwrap(), Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 3.0]));
        assert!(MeasurementEnsemble::custom(&[]).is_err());
        assert!(MeasurementEnsemble::custom(&[Mat::zeros(2, 2), Mat::zeros(3, 3)]).is_err());
    }
}
