use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use genedit_core::editflow::FlowError;
use genedit_core::exec::ExecError;
use genedit_core::knowledge::KnowledgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    Unauthorized,
    NotFound,
    Conflict,
    ProviderUnavailable,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::ProviderUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Error envelope returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into(), detail: serde_json::Value::Null }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<KnowledgeError> for ApiError {
    fn from(e: KnowledgeError) -> Self {
        let code = match &e {
            KnowledgeError::UnknownVersion(_) => ErrorCode::NotFound,
            KnowledgeError::StaleEdit { .. }
            | KnowledgeError::NotApproved(_)
            | KnowledgeError::IllegalTransition { .. }
            | KnowledgeError::DuplicateRecord(_) => ErrorCode::Conflict,
            KnowledgeError::InvalidEdit(_) => ErrorCode::BadRequest,
            KnowledgeError::Provider(_) => ErrorCode::ProviderUnavailable,
            KnowledgeError::Exec(ExecError::UnknownDatabase(_)) => ErrorCode::NotFound,
            KnowledgeError::Io(_) | KnowledgeError::Corrupt(_) | KnowledgeError::Exec(_) => ErrorCode::Internal,
        };
        let detail = match &e {
            KnowledgeError::StaleEdit { edit_id, target_id } => {
                serde_json::json!({ "edit_id": edit_id, "target_id": target_id })
            }
            _ => serde_json::Value::Null,
        };
        ApiError::new(code, e.to_string()).with_detail(detail)
    }
}

impl From<FlowError> for ApiError {
    fn from(e: FlowError) -> Self {
        let code = match e {
            FlowError::Knowledge(k) => return k.into(),
            FlowError::UnknownSession(_) | FlowError::UnknownEdit(_) => ErrorCode::NotFound,
            FlowError::ForeignEdit { .. } | FlowError::EmptyFeedback | FlowError::MalformedEdit(_) => ErrorCode::BadRequest,
            FlowError::SessionClosed { .. }
            | FlowError::NothingStaged
            | FlowError::NotRegressionPassed(_)
            | FlowError::NoContext(_)
            | FlowError::WrongStatus { .. } => ErrorCode::Conflict,
            FlowError::Generation(_) => ErrorCode::ProviderUnavailable,
            FlowError::Io(_) => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<ExecError> for ApiError {
    fn from(e: ExecError) -> Self {
        let code = match e {
            ExecError::UnknownDatabase(_) => ErrorCode::NotFound,
            ExecError::Sql(_) | ExecError::NotReadOnly => ErrorCode::Conflict,
            ExecError::Open(_) => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}
