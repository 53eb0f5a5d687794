use detectlab_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("invalid argument `{what}`: {why}")]
    InvalidArgument { what: &'static str, why: String },

    #[error("focus state not initialized: no loss mean has been recorded yet")]
    UninitializedFocus,

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl LossError {
    pub fn arg(what: &'static str, why: impl Into<String>) -> Self {
        LossError::InvalidArgument {
            what,
            why: why.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LossError>;
