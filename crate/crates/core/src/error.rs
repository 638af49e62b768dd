use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("horizon mismatch: expected {expected} steps, got {got}")]
    Horizon { expected: usize, got: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error(
        "learning diverged at iteration {iteration}: |e|_inf = {e_inf:e} (initial {initial:e})"
    )]
    Diverged {
        iteration: usize,
        e_inf: f64,
        initial: f64,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
