use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// The preconditioner `X^T X + eta I` cannot be factorized.
    #[error("preconditioner is numerically singular (min eigenvalue {min_eig:e})")]
    Singular { min_eig: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    /// A quantity is undefined because the iterate already matches its target
    /// (zero error matrix, zero loss, or zero gradient).
    #[error("converged: {0} is undefined at zero error")]
    Converged(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
