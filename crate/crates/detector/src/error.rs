use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] detectlab_tensor::TensorError),

    #[error(transparent)]
    Nn(#[from] detectlab_nn::NnError),

    #[error(transparent)]
    Loss(#[from] detectlab_loss::LossError),

    #[error(transparent)]
    Metrics(#[from] detectlab_metrics::MetricsError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DetectorError>;
