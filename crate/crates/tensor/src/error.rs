use thiserror::Error;

/// Failures raised by tensor construction, graph operations and backward.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    /// Shapes or axes that do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An operation produced NaN or an infinity.
    #[error("numeric error in {op}: non-finite value at element {index}")]
    Numeric { op: &'static str, index: usize },
    /// Caller violated an operation contract (non-scalar root, bad step size, ...).
    #[error("contract error: {0}")]
    Contract(String),
    /// The graph is in the wrong state for the request.
    #[error("state error: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Dimension(msg.into()))
}
