use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Shapes, extents, or axes that do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Input outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Violated precondition on how the API is used.
    #[error("contract error: {0}")]
    Contract(String),
    /// Malformed serialized tensor.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::TensorError::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
