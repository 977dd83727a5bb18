use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use slicereg_core::Error;

/// Error body sent with every non-2xx API response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
            },
        }
    }

    pub fn malformed_body(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", message)
    }

    pub fn no_dataset() -> Self {
        ApiError::new(
            StatusCode::CONFLICT,
            "no_dataset",
            "no dataset loaded; start with --config or POST /api/config",
        )
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

/// Status and code for a core error, judged by its innermost cause.
pub fn classify(err: &Error) -> (StatusCode, &'static str) {
    use Error::*;
    match err.root() {
        InvalidParameter(_) => (StatusCode::BAD_REQUEST, "invalid_parameter"),
        MalformedConfig(_)
        | MissingField(_)
        | BadPattern { .. }
        | MissingCaptureGroup { .. }
        | EmptyDataset
        | IncompleteCase { .. }
        | AmbiguousMatch(_) => (StatusCode::BAD_REQUEST, "malformed_config"),
        UnknownCase(_) | UnknownSlice(_) => (StatusCode::NOT_FOUND, "not_found"),
        AtBoundary => (StatusCode::CONFLICT, "at_boundary"),
        NoScores => (StatusCode::CONFLICT, "no_scores"),
        Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io_error"),
        UnsupportedDatatype(_) | CorruptHeader(_) | MalformedCsv(_) => {
            (StatusCode::INTERNAL_SERVER_ERROR, "bad_input_file")
        }
        _ => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_data"),
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let (status, code) = classify(&err);
        ApiError::new(status, code, err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;
