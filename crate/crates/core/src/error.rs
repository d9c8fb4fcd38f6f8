use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{dim} dimension {size} is not divisible by block {dim} {block}")]
    NotDivisible {
        dim: &'static str,
        size: usize,
        block: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
