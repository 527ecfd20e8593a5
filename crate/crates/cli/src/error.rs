use std::fmt;

use maser_core::MaserError;

/// Exit status for malformed input files and configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for failures inside the numerical routines.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<MaserError> for CliError {
    fn from(e: MaserError) -> Self {
        let code = match e {
            MaserError::Format { .. } | MaserError::Io(_) | MaserError::Domain(_) => EXIT_CONFIG,
            MaserError::Truncation(_)
            | MaserError::Solve(_)
            | MaserError::Numerical(_)
            | MaserError::EmptySample(_) => EXIT_NUMERICAL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::config(e.to_string())
    }
}
