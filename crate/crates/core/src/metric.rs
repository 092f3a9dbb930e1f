//! The preconditioner metric `P = X^T X + eta I_r`.
//!
//! All quantities go through the `r x r` matrix `P`; the `nr x nr` operator
//! `P (x) I_n` is never formed. For an `n x r` matrix `G`:
//!
//! * `||G||_P = ||G P^{1/2}||_F = sqrt(tr(G P G^T))`
//! * `||G||_P* = ||G P^{-1/2}||_F = sqrt(tr(G P^{-1} G^T))`

use nalgebra::Cholesky;

use crate::linalg::{inner, sym_eigen_desc};
use crate::model::Factor;
use crate::{Error, Mat, Result};

/// Relative eigenvalue floor below which `P` counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-14;

/// `X^T X + eta I`.
pub fn p_gram(x: &Factor, eta: f64) -> Mat {
    let r = x.rank();
    x.gram() + Mat::identity(r, r) * eta
}

fn check_dir(x: &Factor, g: &Mat, context: &'static str) -> Result<()> {
    if g.nrows() != x.n() || g.ncols() != x.rank() {
        return Err(Error::dim(context, format!("{}x{}", x.n(), x.rank()), format!("{}x{}", g.nrows(), g.ncols())));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) {
        return Err(Error::Domain(format!("damping must be >= 0, got {eta}")));
    }
    Ok(())
}

/// `||G||_P`.
pub fn p_norm(x: &Factor, eta: f64, g: &Mat) -> Result<f64> {
    check_eta(eta)?;
    check_dir(x, g, "p_norm")?;
    let p = p_gram(x, eta);
    Ok(inner(&(g * p), g).max(0.0).sqrt())
}

/// Cholesky factor of `P`, after checking the relative eigenvalue floor.
fn factorize(x: &Factor, eta: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    check_eta(eta)?;
    let p = p_gram(x, eta);
    let ev = sym_eigen_desc(&p).values;
    let (max, min) = (ev[0], ev[ev.len() - 1]);
    if !(min > SINGULAR_RTOL * max) || !min.is_finite() {
        return Err(Error::Singular { min_eig: min });
    }
    Cholesky::new(p).ok_or(Error::Singular { min_eig: min })
}

/// `G (X^T X + eta I)^{-1}` through a Cholesky solve.
pub fn apply_inverse(x: &Factor, eta: f64, g: &Mat) -> Result<Mat> {
    check_dir(x, g, "apply_inverse")?;
    let chol = factorize(x, eta)?;
    // P symmetric: G P^{-1} = (P^{-1} G^T)^T
    Ok(chol.solve(&g.transpose()).transpose())
}

/// `||G||_P*` via a Cholesky solve.
pub fn dual_p_norm(x: &Factor, eta: f64, g: &Mat) -> Result<f64> {
    let d = apply_inverse(x, eta, g)?;
    Ok(inner(&d, g).max(0.0).sqrt())
}

/// `P^{-1/2}` from a symmetric eigendecomposition.
pub fn p_inv_sqrt(x: &Factor, eta: f64) -> Result<Mat> {
    check_eta(eta)?;
    let eig = sym_eigen_desc(&p_gram(x, eta));
    let (max, min) = (eig.values[0], eig.values[eig.values.len() - 1]);
    if !(min > SINGULAR_RTOL * max) {
        return Err(Error::Singular { min_eig: min });
    }
    let scale = eig.values.map(|v| 1.0 / v.sqrt());
    Ok(&eig.vectors * Mat::from_diagonal(&scale) * eig.vectors.transpose())
}

/// `||G P^{-1/2}||_F` through the eigendecomposition path.
pub fn dual_p_norm_eig(x: &Factor, eta: f64, g: &Mat) -> Result<f64> {
    check_dir(x, g, "dual_p_norm_eig")?;
    Ok((g * p_inv_sqrt(x, eta)?).norm())
}

/// Rule for the damping parameter `eta_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DampingSchedule {
    /// Constant `eta`.
    Fixed(f64),
    /// `eta = sqrt(f)`, for noiseless measurements.
    NoiselessSqrtF,
    /// `eta = (1/sqrt(c)) ||A(XX^T - M*)||`; needs the ground truth.
    OracleResidual,
    /// `eta = sqrt(|f - sigma_hat^2|)` with the given variance estimate.
    VarianceProxy(f64),
    /// `eta = f_p^(1/p)` for the `l_p` loss.
    LpRoot(f64),
}

impl DampingSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DampingSchedule::Fixed(eta) if !(eta >= 0.0) || !eta.is_finite() => {
                Err(Error::Config(format!("fixed damping must be finite and >= 0, got {eta}")))
            }
            DampingSchedule::VarianceProxy(s2) if !(s2 >= 0.0) || !s2.is_finite() => {
                Err(Error::Config(format!("variance proxy must be finite and >= 0, got {s2}")))
            }
            DampingSchedule::LpRoot(p) if !(p >= 1.0) || !p.is_finite() => {
                Err(Error::Config(format!("l_p root exponent must be >= 1, got {p}")))
            }
            _ => Ok(()),
        }
    }

    /// Schedules whose iterates are selected by the minimal-`eta` rule.
    pub fn uses_best_iterate(&self) -> bool {
        matches!(self, DampingSchedule::OracleResidual | DampingSchedule::VarianceProxy(_))
    }
}

/// Evaluates `eta_k`. `residual_norm` is `(1/sqrt(c)) ||A(XX^T - M*)||` and
/// is only consulted by [`DampingSchedule::OracleResidual`].
pub fn damping(schedule: &DampingSchedule, f_value: f64, residual_norm: Option<f64>) -> Result<f64> {
    schedule.validate()?;
    Ok(match *schedule {
        DampingSchedule::Fixed(eta) => eta,
        DampingSchedule::NoiselessSqrtF => f_value.max(0.0).sqrt(),
        DampingSchedule::OracleResidual => residual_norm
            .ok_or_else(|| Error::Config("oracle damping requires the ground truth".into()))?,
        DampingSchedule::VarianceProxy(s2) => (f_value - s2).abs().sqrt(),
        DampingSchedule::LpRoot(p) => f_value.max(0.0).powf(1.0 / p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, seeded};
    use crate::Vector;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(v))
    }

    fn orthonormal(n: usize, r: usize, seed: u64) -> Factor {
        let mut rng = seeded(seed);
        let q = gaussian_matrix(&mut rng, n, r).qr().q();
        Factor::new(q.columns(0, r).into_owned()).unwrap()
    }

    #[test]
    fn gram_examples() {
        let q = orthonormal(5, 3, 1);
        assert!((p_gram(&q, 0.0) - Mat::identity(3, 3)).norm() < 1e-14);
        let x = Factor::new(diag(&[1.0, 0.5])).unwrap();
        assert_eq!(p_gram(&x, 0.25), diag(&[1.25, 0.5]));
        assert_eq!(p_gram(&Factor::zeros(3, 2).unwrap(), 0.0), Mat::zeros(2, 2));
    }

    #[test]
    fn norms_with_identity_metric() {
        let q = orthonormal(6, 2, 2);
        let mut rng = seeded(3);
        let g = gaussian_matrix(&mut rng, 6, 2);
        assert!((p_norm(&q, 0.0, &g).unwrap() - g.norm()).abs() < 1e-12);
        assert!((dual_p_norm(&q, 0.0, &g).unwrap() - g.norm()).abs() < 1e-12);
        assert!((apply_inverse(&q, 0.0, &g).unwrap() - &g).norm() < 1e-12);
        assert_eq!(p_norm(&q, 0.0, &Mat::zeros(6, 2)).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_values() {
        let x = Factor::new(diag(&[1.0, 0.5])).unwrap();
        let i2 = Mat::identity(2, 2);
        assert!((p_norm(&x, 0.25, &i2).unwrap() - 1.75f64.sqrt()).abs() < 1e-12);
        assert!((p_norm(&x, 0.25, &i2).unwrap() - 1.322876).abs() < 1e-6);
        let dual = dual_p_norm(&x, 0.25, &i2).unwrap();
        assert!((dual - (1.0 / 1.25 + 1.0 / 0.5f64).sqrt()).abs() < 1e-12);
        assert!((dual - 1.67332).abs() < 1e-5);
        let d = apply_inverse(&x, 0.0, &diag(&[0.0, 0.5])).unwrap();
        assert!((d - diag(&[0.0, 2.0])).norm() < 1e-12);
    }

    #[test]
    fn large_damping_recovers_euclidean_step() {
        let mut rng = seeded(4);
        let x = Factor::new(gaussian_matrix(&mut rng, 5, 3)).unwrap();
        let g = gaussian_matrix(&mut rng, 5, 3);
        let eta = 1e8;
        let scaled = apply_inverse(&x, eta, &g).unwrap() * eta;
        assert!((scaled - &g).norm() <= 1e-6 * g.norm());
    }

    #[test]
    fn singular_preconditioner_is_reported() {
        let x = Factor::new(Mat::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let g = Mat::from_element(3, 2, 1.0);
        match apply_inverse(&x, 0.0, &g) {
            Err(Error::Singular { min_eig }) => assert!(min_eig.abs() < 1e-14),
            other => panic!("expected singular, got {other:?}"),
        }
        assert!(matches!(dual_p_norm(&x, 0.0, &g), Err(Error::Singular { .. })));
        assert!(matches!(dual_p_norm_eig(&x, 0.0, &g), Err(Error::Singular { .. })));
        assert!(apply_inverse(&x, 1e-3, &g).is_ok());
        assert!(matches!(apply_inverse(&Factor::zeros(3, 2).unwrap(), 0.0, &g), Err(Error::Singular { .. })));
    }

    #[test]
    fn cholesky_and_eigen_paths_agree() {
        let mut rng = seeded(5);
        for _ in 0..50 {
            let x = Factor::new(gaussian_matrix(&mut rng, 6, 3)).unwrap();
            let g = gaussian_matrix(&mut rng, 6, 3);
            let eta = 0.1;
            let a = dual_p_norm(&x, eta, &g).unwrap();
            let b = dual_p_norm_eig(&x, eta, &g).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn duality_and_cauchy_schwarz() {
        let mut rng = seeded(6);
        for _ in 0..100 {
            let x = Factor::new(gaussian_matrix(&mut rng, 5, 2)).unwrap();
            let eta = 0.05 + rng_uniform(&mut rng);
            let g = gaussian_matrix(&mut rng, 5, 2);
            let h = gaussian_matrix(&mut rng, 5, 2);
            let lhs = inner(&g, &h).abs();
            let rhs = p_norm(&x, eta, &h).unwrap() * dual_p_norm(&x, eta, &g).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12));

            // the maximizer Y* = P^{-1}-scaled G attains the dual norm
            let dn = dual_p_norm(&x, eta, &g).unwrap();
            let y = apply_inverse(&x, eta, &g).unwrap() / dn;
            assert!((p_norm(&x, eta, &y).unwrap() - 1.0).abs() < 1e-10);
            assert!((inner(&y, &g) - dn).abs() <= 1e-10 * dn);
            // ||D||_P = ||G||_P* for D = G P^{-1}
            let d = apply_inverse(&x, eta, &g).unwrap();
            assert!((p_norm(&x, eta, &d).unwrap() - dn).abs() <= 1e-10 * dn);
        }
    }

    fn rng_uniform(rng: &mut crate::rng::SeededRng) -> f64 {
        use rand::Rng;
        rng.random::<f64>()
    }

    #[test]
    fn damping_schedules() {
        assert!((damping(&DampingSchedule::NoiselessSqrtF, 0.04, None).unwrap() - 0.2).abs() < 1e-15);
        assert!((damping(&DampingSchedule::VarianceProxy(1.0), 1.25, None).unwrap() - 0.5).abs() < 1e-15);
        assert!((damping(&DampingSchedule::VarianceProxy(1.0), 0.75, None).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(damping(&DampingSchedule::LpRoot(1.4), 1.0, None).unwrap(), 1.0);
        assert_eq!(damping(&DampingSchedule::Fixed(0.3), 9.0, None).unwrap(), 0.3);
        assert_eq!(damping(&DampingSchedule::OracleResidual, 9.0, Some(0.7)).unwrap(), 0.7);
        assert!(matches!(damping(&DampingSchedule::OracleResidual, 9.0, None), Err(Error::Config(_))));
        assert!(matches!(damping(&DampingSchedule::Fixed(-1.0), 1.0, None), Err(Error::Config(_))));
    }

    #[test]
    fn sqrt_damping_is_monotone() {
        let mut prev = 0.0;
        for i in 0..1000 {
            let f = i as f64 * 0.013;
            let eta = damping(&DampingSchedule::NoiselessSqrtF, f, None).unwrap();
            assert!(eta >= prev);
            prev = eta;
        }
    }
}
