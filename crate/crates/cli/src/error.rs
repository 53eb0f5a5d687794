use detectlab_detector::DetectorError;
use thiserror::Error;

/// Exit codes: 0 success, 1 validation failure, 2 numerical failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError::Numerical(msg.into())
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::Numerical(msg) => CliError::Numerical(msg),
            other => CliError::Validation(other.to_string()),
        }
    }
}

macro_rules! impl_validation_from {
    ($($ty:ty),+) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Validation(e.to_string())
            }
        })+
    };
}

impl_validation_from!(
    detectlab_tensor::TensorError,
    detectlab_nn::NnError,
    detectlab_loss::LossError,
    detectlab_metrics::MetricsError,
    detectlab_synth::SynthError,
    std::io::Error,
    serde_json::Error
);

pub type Result<T> = std::result::Result<T, CliError>;
