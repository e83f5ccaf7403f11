use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use crate::error::CliError;

#[derive(Clone, Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: CliError,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: CliError::new(code, message, 1) }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl From<edgewipe::Error> for ApiError {
    fn from(e: edgewipe::Error) -> Self {
        use edgewipe::Error::*;
        let status = match &e {
            MaskOutOfBounds(_) | DegeneratePolygon(_) | InvalidParams(_) | InvalidSpec(_) | InvalidTileSize(_) | UnsupportedFormat(_) | UnreadableFile { .. }
            | ShapeMismatch(_) | Json(_) | EmptyTrainingSet => StatusCode::BAD_REQUEST,
            OutOfBounds { .. } => StatusCode::NOT_FOUND,
            CheckpointMismatch(_) | WrongFeatureKind { .. } | DimMismatch { .. } | InconsistentGrid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, body: CliError::from(e) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
