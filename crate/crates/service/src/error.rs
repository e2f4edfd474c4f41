use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("case {0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Validation(String),
    #[error("image rejected: {0}")]
    Unprocessable(String),
    #[error("no active model")]
    NoActiveModel,
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("storage failure at {path}: {source}")]
    Storage {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt event log line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] nailguard::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub fn storage(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Storage { path: path.as_ref().display().to_string(), source }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::Validation(_) => StatusCode::BAD_REQUEST,
            Self::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::NoActiveModel => StatusCode::SERVICE_UNAVAILABLE,
            Self::Unauthorized => StatusCode::UNAUTHORIZED,
            Self::Storage { .. } | Self::CorruptLog { .. } | Self::Model(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::Conflict(_) => "conflict",
            Self::Validation(_) => "validation",
            Self::Unprocessable(_) => "unprocessable_image",
            Self::NoActiveModel => "no_active_model",
            Self::Unauthorized => "unauthorized",
            Self::Storage { .. } | Self::CorruptLog { .. } => "storage",
            Self::Model(_) => "model",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
