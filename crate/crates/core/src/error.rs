use thiserror::Error;

/// Errors raised across the library. The CLI maps each variant onto an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("inadmissible medium: {0}")]
    Inadmissible(String),
    #[error("Neumann series diverged: observed contraction {contraction:.4} >= 1")]
    Divergence { contraction: f64 },
    #[error("numerical check failed: {0}")]
    Check(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for configuration, 3 for numerical, 4 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Argument(_) | Error::Inadmissible(_) | Error::Config(_) => 2,
            Error::Divergence { .. } | Error::Check(_) => 3,
            Error::Io(_) => 4,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
