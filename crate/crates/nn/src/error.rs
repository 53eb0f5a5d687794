use detectlab_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("block configuration error: {0}")]
    Config(String),

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NnError>;
