use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrmError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite importance weight at row {row}")]
    NonFiniteWeight { row: usize },

    #[error("invalid estimate: {0}")]
    InvalidEstimate(String),

    #[error("numerically singular matrix: {0}")]
    Singular(String),

    #[error("non-finite objective or gradient at theta = {theta:?}")]
    NonFinite { theta: Vec<f64> },

    #[error("no eligible candidate: {0}")]
    NoEligibleCandidate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CrmError>;
