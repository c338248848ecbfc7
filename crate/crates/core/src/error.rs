use thiserror::Error;

/// Errors raised by model construction, inference and scheduling.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector that had to be normalized summed to zero (contradictory model).
    #[error("vector sums to zero and cannot be normalized")]
    ZeroVector,
    #[error("state space of {0} joint assignments exceeds the enumeration guard")]
    TooLarge(u128),
    #[error("joint distribution has zero total mass")]
    ZeroDistribution,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("random graph construction failed after {0} restarts")]
    GraphConstructionFailed(usize),
    #[error("scheduler is empty")]
    Empty,
    #[error("adversary chose window index {index} but only {window} entries are legal")]
    IllegalAdversaryChoice { index: usize, window: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
