use dermtriage_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Body of every non-success response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
            details: Value::Null,
            status,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(404, "not_found", message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(400, "validation_failed", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "internal", message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        match e {
            CoreError::NotFound(_) => Self::not_found(message),
            CoreError::IllegalTransition { op, state } => {
                Self::new(409, "illegal_transition", message).with_details(serde_json::json!({
                    "operation": op,
                    "state": state,
                }))
            }
            CoreError::Unauthorized(_) => Self::new(403, "forbidden", message),
            CoreError::InvalidImage(_)
            | CoreError::InvalidCrop(_)
            | CoreError::InvalidRoi(_)
            | CoreError::InvalidDistortion(_)
            | CoreError::ImageTooSmall { .. }
            | CoreError::Png(_)
            | CoreError::Shape(_)
            | CoreError::Validation(_)
            | CoreError::UnknownClass(_)
            | CoreError::Manifest(_)
            | CoreError::Csv(_)
            | CoreError::Json(_) => Self::validation(message),
            CoreError::Training(_) | CoreError::ModelFormat(_) | CoreError::Io { .. } => Self::internal(message),
        }
    }
}
