use thiserror::Error;

/// Failures of a CLI invocation, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or a rejected configuration (exit code 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed input, unwritable output (exit code 2).
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<relaxed_bp::Error> for CliError {
    fn from(e: relaxed_bp::Error) -> Self {
        match e {
            relaxed_bp::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
