use thiserror::Error;

/// Crate-wide error type. The CLI maps `Config` to exit code 2 and
/// `Data` to exit code 3; everything else exits 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("planning error: {0}")]
    Planning(String),
    #[error("numerical guard: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("unsupported visualization: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
