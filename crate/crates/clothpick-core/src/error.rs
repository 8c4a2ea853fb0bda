//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The variants group into the exit-code classes the CLI reports:
/// configuration/usage (2), data/format (3), numeric/simulation (4).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// A caller violated an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Episode lifecycle misuse (e.g. stepping a finished episode).
    #[error("lifecycle error: {0}")]
    Lifecycle(String),

    /// Initial-state generation could not satisfy the request.
    #[error("generation error: {0}")]
    Generation(String),

    /// The integrator produced non-finite positions.
    #[error("simulation diverged: {0}")]
    SimDiverged(String),

    /// A model evaluation produced a non-finite tensor.
    #[error("numeric error in {what}")]
    Numeric { what: String },

    /// Planning cannot proceed (e.g. empty cloth mask).
    #[error("planning error: {0}")]
    Planning(String),

    /// On-disk format violation (bad magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code class for the CLI: 2 usage/config, 3 data/format,
    /// 4 numeric/simulation/training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Lifecycle(_) => 2,
            Error::Format(_) | Error::Io(_) => 3,
            Error::SimDiverged(_)
            | Error::Numeric { .. }
            | Error::Planning(_)
            | Error::Generation(_) => 4,
        }
    }
}
