//! Error types shared across the crate.

use thiserror::Error;

/// Top-level error for library operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: schema violations, inconsistent parameters.
    #[error("config error: {0}")]
    Config(String),

    /// The model violated a declared contract at runtime (negative rate,
    /// majorant breach, explosion cap).
    #[error("model contract violation: {0}")]
    Model(String),

    /// An iterative solver did not converge within its iteration budget.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// Argument outside an operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Requested operation is not supported for this model.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 model contract, 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Unsupported(_) => 2,
            Error::Model(_) => 3,
            Error::NonConvergence(_) => 4,
            Error::Io(_) => 1,
        }
    }
}
