use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ordering violation: {0}")]
    Ordering(String),

    #[error("timestamp {0} is not on the frame grid")]
    OffGrid(f64),

    #[error("payload of {bytes} bytes exceeds the {cap}-byte capacity")]
    Capacity { bytes: usize, cap: usize },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("frame alignment error: {0}")]
    Alignment(String),

    #[error("similarity undefined: trajectories overlap on {0} frames (need at least 2)")]
    UndefinedSimilarity(usize),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("nothing to write: report list is empty")]
    EmptyReports,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
