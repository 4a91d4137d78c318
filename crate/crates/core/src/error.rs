use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("input width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("timestamps must increase strictly (previous {prev}, got {got})")]
    NonMonotoneTimestamp { prev: f64, got: f64 },

    #[error("appearance region is empty")]
    EmptyRegion,

    #[error("viewing ray is parallel to the target plane")]
    ParallelRay,

    #[error("not enough visible joints ({visible}, need {required})")]
    TooFewJoints { visible: usize, required: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation mismatch, unmatched ids: {0:?}")]
    EvalMismatch(Vec<String>),

    #[error("graph dimension mismatch on edge {edge}: {detail}")]
    DimMismatch { edge: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
