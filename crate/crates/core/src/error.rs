use arst_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// Out-of-range or malformed user input (α values, image sizes, ...).
    #[error("validation error: {0}")]
    Validation(String),
    /// Corrupt or incompatible weight/checkpoint file.
    #[error("format error: {0}")]
    Format(String),
    /// Unusable configuration (missing files, empty directories, ...).
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    /// Training hit a non-finite loss or gradient.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
