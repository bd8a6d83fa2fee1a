use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum IsacError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `h^H W h` vanished for a nonzero covariance, so the rank-one
    /// construction is undefined.
    #[error("degenerate rank-one extraction for BS {bs}, user {user}: h^H W h = {value:e}")]
    DegenerateExtraction { bs: usize, user: usize, value: f64 },

    #[error("degenerate zero-forcing direction for BS {bs}, user {user}: projected channel norm {norm:e}")]
    DegenerateDirection { bs: usize, user: usize, norm: f64 },

    #[error("conic solver did not converge: {0}")]
    NumericalFailure(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IsacError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(IsacError::InvalidArgument(msg.into()))
}
