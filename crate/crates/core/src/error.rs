use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum EgmnError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error("non-finite value in {layer}: {detail}")]
    Numeric { layer: String, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EgmnError>;

impl EgmnError {
    pub(crate) fn numeric(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        EgmnError::Numeric {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    /// Process exit status used by the command-line tool:
    /// 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            EgmnError::Config(_) | EgmnError::Domain(_) => 1,
            EgmnError::Io(_)
            | EgmnError::Csv(_)
            | EgmnError::Json(_)
            | EgmnError::Data(_)
            | EgmnError::Schema(_)
            | EgmnError::Checkpoint(_)
            | EgmnError::Shape(_)
            | EgmnError::Consistency(_) => 2,
            EgmnError::Numeric { .. } | EgmnError::InvalidParams(_) => 3,
        }
    }
}
