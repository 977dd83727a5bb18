//! Non-API paths: the built browser client when a UI directory is given,
//! otherwise a landing page listing the API.

use std::path::PathBuf;

use axum::http::{StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::Router;
use tower_http::services::ServeDir;

use crate::{AppState, ENDPOINTS};

pub(crate) fn with_ui(api: Router<AppState>, ui_dir: Option<PathBuf>) -> Router<AppState> {
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(landing),
    }
}

pub fn landing_page() -> String {
    let items: String = ENDPOINTS
        .iter()
        .map(|(method, path)| format!("<li><code>{method} {path}</code></li>\n"))
        .collect();
    format!(
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>slicereg</title></head>\n\
         <body><h1>slicereg server</h1>\n<p>No UI assets are being served. \
         Start with <code>--ui-dir</code> to host the browser client.</p>\n\
         <ul>\n{items}</ul></body></html>\n"
    )
}

async fn landing(uri: Uri) -> Response {
    match uri.path() {
        "/" | "/index.html" => Html(landing_page()).into_response(),
        _ => (StatusCode::NOT_FOUND, "not found").into_response(),
    }
}
