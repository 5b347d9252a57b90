use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("size mismatch: header implies {expected} bytes of payload, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("stability violation at step {step} (t = {time}): {detail}")]
    Stability { step: usize, time: f64, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("channel plan mismatch: expected {expected:?}, found {found:?}")]
    PlanMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("particle {index} at {position:?} lies outside the domain [0, {extent}]^3")]
    OutsideDomain { index: usize, position: [f64; 3], extent: f64 },

    #[error("training diverged: non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}
