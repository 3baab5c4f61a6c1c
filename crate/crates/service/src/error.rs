use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use keyboard::{KeyboardError, TrialStatus};
use serde::Serialize;
use serde_json::json;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0} not found")]
    NotFound(String),

    #[error("request failed validation")]
    Validation(Vec<FieldError>),

    #[error("expected revision {expected} but the trial is at revision {current}")]
    RevisionConflict { expected: u64, current: u64 },

    #[error("trial is {status} and accepts no more cohorts")]
    Terminal { status: TrialStatus, revision: u64 },

    #[error("trial is still active; finalize with force to close it early")]
    StillActive { revision: u64 },

    #[error("stored trial {id} is inconsistent: {reason}")]
    Corrupt { id: String, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] KeyboardError),
}

pub type ApiResult<T> = Result<T, ApiError>;

impl ApiError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ApiError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError::Validation(vec![FieldError::new(field, message)])
    }

    /// Field-level messages for configuration errors.
    pub fn from_config_errors(errors: Vec<KeyboardError>) -> Self {
        ApiError::Validation(
            errors
                .into_iter()
                .map(|e| match e {
                    KeyboardError::InvalidConfig { field, message } => FieldError::new(field, message),
                    other => FieldError::new("body", other.to_string()),
                })
                .collect(),
        )
    }

    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::RevisionConflict { .. } | ApiError::Terminal { .. } | ApiError::StillActive { .. } => {
                StatusCode::CONFLICT
            }
            ApiError::Core(e) => match e {
                KeyboardError::InvalidConfig { .. } | KeyboardError::OutcomeRange { .. } => {
                    StatusCode::UNPROCESSABLE_ENTITY
                }
                KeyboardError::NotActive(_) | KeyboardError::SampleSizeExceeded { .. } => StatusCode::CONFLICT,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ApiError::Corrupt { .. } | ApiError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::Validation(_) => "validation",
            ApiError::RevisionConflict { .. } => "revision_conflict",
            ApiError::Terminal { .. } => "terminal_state",
            ApiError::StillActive { .. } => "still_active",
            ApiError::Core(KeyboardError::OutcomeRange { .. }) => "validation",
            ApiError::Core(KeyboardError::InvalidConfig { .. }) => "validation",
            ApiError::Core(KeyboardError::NotActive(_)) => "terminal_state",
            ApiError::Core(KeyboardError::SampleSizeExceeded { .. }) => "terminal_state",
            _ => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        match &self {
            ApiError::Validation(fields) => body["fields"] = json!(fields),
            ApiError::Core(KeyboardError::OutcomeRange { .. }) => {
                body["fields"] = json!([FieldError::new("dlt_count", self.to_string())]);
            }
            ApiError::Core(KeyboardError::InvalidConfig { field, message }) => {
                body["fields"] = json!([FieldError::new(*field, message.clone())]);
            }
            ApiError::RevisionConflict { current, .. } => body["revision"] = json!(current),
            ApiError::Terminal { revision, .. } | ApiError::StillActive { revision } => {
                body["revision"] = json!(revision)
            }
            _ => {}
        }
        (self.status(), Json(body)).into_response()
    }
}
