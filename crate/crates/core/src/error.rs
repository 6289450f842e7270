use thiserror::Error;

/// Errors raised by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid index list: {0}")]
    InvalidIndex(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    /// Conditioning could not assign weight to any component.
    #[error("observation outside model support")]
    OutsideSupport,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric within {tol:e}")]
    NotSymmetric { tol: f64 },

    #[error("forward-mapping constraint requires constant pattern")]
    VaryingPattern,

    #[error("method `cmode` requires the true sequence")]
    MissingTruth,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
