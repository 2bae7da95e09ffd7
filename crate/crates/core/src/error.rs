use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: operator has dim {expected}, vector has dim {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid operator spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{what} requires dim <= {cap}, got {dim}; use a probe-based lower bound instead")]
    DenseCapExceeded {
        what: &'static str,
        dim: usize,
        cap: usize,
    },

    #[error("unknown gallery entry `{name}`; available: {available}")]
    UnknownGallery { name: String, available: String },

    #[error("probe set is empty")]
    EmptyProbeSet,

    #[error("invalid probe set: {0}")]
    InvalidProbe(String),

    #[error("tolerance must be positive, got {0}")]
    NonPositiveTolerance(f64),

    #[error("index {requested} is outside the available horizon {available}")]
    HorizonExceeded { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
