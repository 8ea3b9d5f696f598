//! Optional static API key, sent as `x-api-key` or `Authorization: Bearer`.

use axum::extract::{Request, State};
use axum::http::HeaderMap;
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ErrorCode};
use crate::state::Shared;

pub const KEY_HEADER: &str = "x-api-key";

fn presented(headers: &HeaderMap) -> Option<&str> {
    if let Some(v) = headers.get(KEY_HEADER) {
        return v.to_str().ok();
    }
    headers.get("authorization")?.to_str().ok()?.strip_prefix("Bearer ")
}

/// Compares digests so timing does not depend on the common prefix.
fn same_key(given: &str, expected: &str) -> bool {
    Sha256::digest(given.as_bytes()) == Sha256::digest(expected.as_bytes())
}

pub async fn layer(State(state): State<Shared>, request: Request, next: Next) -> Response {
    let Some(expected) = state.api_key.as_deref() else {
        return next.run(request).await;
    };
    if request.uri().path() == "/api/health" {
        return next.run(request).await;
    }
    match presented(request.headers()) {
        Some(given) if same_key(given.trim(), expected) => next.run(request).await,
        _ => ApiError::new(ErrorCode::Unauthorized, "missing or wrong API key").into_response(),
    }
}
