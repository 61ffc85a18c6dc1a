use thiserror::Error;

#[derive(Debug, Error)]
pub enum PixelError {
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("query ({x}, {t}) lies outside the grid range")]
    OutOfRange { x: f64, t: f64 },

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("oracle did not converge: {0}")]
    Convergence(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PixelError>;
