use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mathlink_core::corpus::CorpusError;
use mathlink_core::linker::{ExportError, LinkError};
use mathlink_core::session::{ParseTargetError, SessionError};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    BadRequest,
    UpstreamUnavailable,
}

impl ErrorCode {
    fn status(self) -> StatusCode {
        match self {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::UpstreamUnavailable => StatusCode::SERVICE_UNAVAILABLE,
        }
    }
}

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
    #[serde(skip)]
    status: Option<StatusCode>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            detail: None,
            status: None,
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::Conflict, message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::BadRequest, message)
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    fn with_status(mut self, status: StatusCode) -> Self {
        self.status = Some(status);
        self
    }

    /// Local storage failures; the code stays within the public enum.
    pub(crate) fn storage(err: impl std::fmt::Display) -> Self {
        tracing::error!(error = %err, "session storage failed");
        ApiError::new(ErrorCode::UpstreamUnavailable, format!("session storage failed: {err}"))
            .with_status(StatusCode::INTERNAL_SERVER_ERROR)
    }

    pub fn status(&self) -> StatusCode {
        self.status.unwrap_or(self.code.status())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(err: SessionError) -> Self {
        let message = err.to_string();
        match err {
            SessionError::UnknownTarget(t) | SessionError::NotAnnotated(t) => {
                ApiError::not_found(message).with_detail(serde_json::json!({ "target": t.to_string() }))
            }
            SessionError::AlreadyAnnotated(t) | SessionError::Rejected(t) | SessionError::AlreadyRejected(t) => {
                ApiError::conflict(message).with_detail(serde_json::json!({ "target": t.to_string() }))
            }
            SessionError::Io(e) => ApiError::storage(e),
            _ => ApiError::bad_request(message),
        }
    }
}

impl From<CorpusError> for ApiError {
    fn from(err: CorpusError) -> Self {
        let message = err.to_string();
        match err {
            CorpusError::NotFound(_) | CorpusError::FileMissing(_) => ApiError::not_found(message),
            CorpusError::Network(_) | CorpusError::RateLimited { .. } | CorpusError::Io { .. } => {
                ApiError::new(ErrorCode::UpstreamUnavailable, message)
            }
            _ => ApiError::bad_request(message),
        }
    }
}

impl From<LinkError> for ApiError {
    fn from(err: LinkError) -> Self {
        ApiError::bad_request(err.to_string())
    }
}

impl From<ExportError> for ApiError {
    fn from(err: ExportError) -> Self {
        ApiError::storage(err)
    }
}

impl From<ParseTargetError> for ApiError {
    fn from(err: ParseTargetError) -> Self {
        ApiError::bad_request(err.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(err: JsonRejection) -> Self {
        ApiError::bad_request(err.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(err: QueryRejection) -> Self {
        ApiError::bad_request(err.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(err: PathRejection) -> Self {
        ApiError::bad_request(err.body_text())
    }
}
