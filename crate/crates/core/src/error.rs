use thiserror::Error;

/// Errors raised by the model, simulation and inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaserError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The Fock truncation is too small for the requested computation.
    #[error("truncation error: {0}")]
    Truncation(String),

    /// A banded linear solve failed or was too ill-conditioned to trust.
    #[error("linear solve failed: {0}")]
    Solve(String),

    /// An iterative numerical method did not converge, or produced an invalid value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A record or configuration file is malformed.
    #[error("format error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Format { line: Option<u64>, message: String },

    /// A statistic was requested on an empty sample.
    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl MaserError {
    pub(crate) fn format(message: impl Into<String>) -> Self {
        MaserError::Format {
            line: None,
            message: message.into(),
        }
    }

    pub(crate) fn format_at(line: u64, message: impl Into<String>) -> Self {
        MaserError::Format {
            line: Some(line),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for MaserError {
    fn from(e: std::io::Error) -> Self {
        MaserError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MaserError>;
