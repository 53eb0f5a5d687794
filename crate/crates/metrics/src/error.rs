use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid record on line {line}: {why}")]
    InvalidRecord { line: usize, why: String },

    #[error("invalid argument `{what}`: {why}")]
    InvalidArgument { what: &'static str, why: String },

    #[error(transparent)]
    Box(#[from] detectlab_loss::LossError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MetricsError {
    pub fn arg(what: &'static str, why: impl Into<String>) -> Self {
        MetricsError::InvalidArgument {
            what,
            why: why.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MetricsError>;
