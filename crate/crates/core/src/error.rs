use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid payload: {0}")]
    InvalidPayload(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
