use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Tensor(#[from] detectlab_tensor::TensorError),

    #[error(transparent)]
    Box(#[from] detectlab_loss::LossError),

    #[error(transparent)]
    Metrics(#[from] detectlab_metrics::MetricsError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;
