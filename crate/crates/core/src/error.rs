use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("angle {0} rad lies outside [-pi/2, pi/2]")]
    InvalidAngle(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("channel synthesis failed: {0}")]
    Synthesis(String),

    #[error("label {label} outside 1..={classes}")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("cannot suppress inter-user interference: {0}")]
    Singular(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
