use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid argument `{what}`: {why}")]
    InvalidArgument { what: &'static str, why: String },

    #[error("tensor file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TensorError {
    pub fn arg(what: &'static str, why: impl Into<String>) -> Self {
        TensorError::InvalidArgument {
            what,
            why: why.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
