//! Error taxonomy shared across the library.
//!
//! Variants map onto the CLI exit-code contract: configuration and input
//! problems exit 2, numerical failures exit 3.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameter value (domain violations, bad hyperparameters).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Mismatched input lengths or dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed configuration file or option set.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed data file (line numbers are 1-based and include the header).
    #[error("malformed input data: {0}")]
    Data(String),

    /// Input exceeds an operation's hard size cap.
    #[error("size limit exceeded: {what} has n = {n}, cap is {cap}")]
    SizeLimit { what: String, n: usize, cap: usize },

    /// Numerical failure (factorization breakdown, divergence, non-finite values).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Serialized artifact is corrupt or from an incompatible configuration.
    #[error("artifact format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI process exit code for this error per the interface contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }

    /// Prefix the message with the pipeline stage that raised it, keeping
    /// the variant (and therefore the exit code) intact.
    pub fn with_stage(self, stage: &str) -> Error {
        match self {
            Error::Parameter(m) => Error::Parameter(format!("stage {stage}: {m}")),
            Error::Shape(m) => Error::Shape(format!("stage {stage}: {m}")),
            Error::Config(m) => Error::Config(format!("stage {stage}: {m}")),
            Error::Data(m) => Error::Data(format!("stage {stage}: {m}")),
            Error::SizeLimit { what, n, cap } => {
                Error::SizeLimit { what: format!("stage {stage}: {what}"), n, cap }
            }
            Error::Numerical(m) => Error::Numerical(format!("stage {stage}: {m}")),
            Error::Format(m) => Error::Format(format!("stage {stage}: {m}")),
            Error::Io(e) => Error::Format(format!("stage {stage}: i/o error: {e}")),
        }
    }
}
