use thiserror::Error;

/// Errors produced anywhere in the editing pipeline.
#[derive(Debug, Error)]
pub enum AgeError {
    #[error("category not found: {0}")]
    NotFound(String),
    #[error("category has no samples: {0}")]
    EmptyCategory(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("construction failed: {0}")]
    ConstructionFailed(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("svd did not converge after {sweeps} sweeps")]
    Convergence { sweeps: usize },
    #[error("rank-deficient basis: {0}")]
    Rank(String),
    #[error("training diverged at epoch {epoch}: {what}")]
    Divergence { epoch: usize, what: String },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl AgeError {
    /// Short machine-readable tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            AgeError::NotFound(_) => "not_found",
            AgeError::EmptyCategory(_) => "empty_category",
            AgeError::EmptyDataset => "empty_dataset",
            AgeError::Shape(_) => "shape_error",
            AgeError::ConstructionFailed(_) => "construction_failed",
            AgeError::Range(_) => "range_error",
            AgeError::InsufficientData(_) => "insufficient_data",
            AgeError::Convergence { .. } => "convergence_error",
            AgeError::Rank(_) => "rank_error",
            AgeError::Divergence { .. } => "divergence_error",
            AgeError::InvalidValue(_) => "invalid_value",
            AgeError::Config(_) => "config_error",
            AgeError::Format(_) => "format_error",
            AgeError::Io(_) => "io_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, AgeError>;

pub(crate) fn shape_err(msg: impl Into<String>) -> AgeError {
    AgeError::Shape(msg.into())
}
