use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("environment index {index} out of range (n_env = {n_env})")]
    EnvIndex { index: usize, n_env: usize },

    #[error("empty split")]
    EmptySplit,

    #[error("task mismatch: {0}")]
    Task(&'static str),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: u64, what: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
