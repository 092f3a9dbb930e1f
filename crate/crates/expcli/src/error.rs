use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Errors surfaced by the command line. Each maps to an exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<precgd::Error> for CliError {
    fn from(e: precgd::Error) -> Self {
        match e {
            precgd::Error::Io { path, message } => CliError::Io(format!("{path}: {message}")),
            precgd::Error::Format(msg) => CliError::Io(format!("format error: {msg}")),
            other => CliError::Config(other.to_string()),
        }
    }
}
