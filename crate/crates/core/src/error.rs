use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph must have at least one node")]
    EmptyGraph,

    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("{op}: shape mismatch (expected {expected:?}, found {found:?})")]
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("row {row} is not stochastic (sum = {sum})")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("node {node} is isolated and self_weight is 0")]
    IsolatedNode { node: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("diffusion diverged at step {step}")]
    Divergence { step: usize },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("operator-norm bound {bound} >= 1, invertibility of I - M is not certified")]
    NotContractive { bound: f64 },

    #[error("evaluation mask is empty")]
    EmptyMask,

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
