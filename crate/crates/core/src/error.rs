//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A run/sweep configuration is inconsistent (bad scheme/mode pair,
    /// unparsable mnemonic, zero feature dimensions, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A numerical routine failed to reach its required tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The chain violates a structural assumption (e.g. multichain).
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    /// An input is structurally valid but carries no usable information
    /// (empty sample pool, zero probability mass, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// No neighborhood ended up with a reference state; the system
    /// cannot be calibrated at all.
    #[error("unrecoverable configuration: {0}")]
    UnrecoverableConfig(String),

    /// Offset calibration cannot make progress on the auxiliary chain.
    #[error("calibration deadlock: {0}")]
    CalibrationDeadlock(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::InvalidConfig(_)
            | Error::UnsupportedModel(_)
            | Error::DegenerateInput(_)
            | Error::UnrecoverableConfig(_)
            | Error::Parse(_) => 2,
            Error::Numerical(_) | Error::CalibrationDeadlock(_) => 3,
            Error::Io(_) => 1,
        }
    }
}
