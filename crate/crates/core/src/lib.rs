//! Low-rank matrix sensing with preconditioned gradient descent.
//!
//! The model `XX^T` is fitted to linear measurements `y = A(M*) + noise` of a
//! rank-`r*` positive semidefinite ground truth, with a search rank `r` that
//! may exceed `r*`. Three iterations are provided:
//!
//! * GD: `X <- X - a * grad`
//! * ScaledGD: `X <- X - a * grad * (X^T X)^-1`
//! * PrecGD: `X <- X - a * grad * (X^T X + eta I)^-1`
//!
//! PrecGD keeps a linear rate in the over-parameterized regime `r > r*`
//! provided the damping `eta` tracks the error `||XX^T - M*||_F`. The
//! [`analysis`] module exposes the closed-form constants behind that
//! guarantee so they can be checked numerically.

pub mod analysis;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metric;
pub mod model;
pub mod rng;
pub mod sensing;
pub mod solver;

pub use error::{Error, Result};
pub use metric::DampingSchedule;
pub use model::{Factor, GroundTruth, ProblemInstance};
pub use sensing::{EnsembleKind, MeasurementEnsemble, Normalization, Observations};
pub use solver::{
    IterationRecord, LossKind, Method, RecordFlag, RunOutcome, SolverConfig, StepPolicy, Trace,
};

/// Dense column-major matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
