//! Replays the stored response when a mutating request is retried with the
//! same `Idempotency-Key`. Reusing a key for a different request is a
//! conflict. Server errors are not stored so the retry runs again.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use sha2::{Digest, Sha256};

use crate::error::ApiError;

pub const KEY_HEADER: &str = "idempotency-key";
pub const REPLAY_HEADER: &str = "idempotent-replay";

const MAX_BODY: usize = 16 * 1024 * 1024;

struct Stored {
    fingerprint: String,
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

type Slot = Arc<tokio::sync::Mutex<Option<Stored>>>;

#[derive(Default)]
pub struct IdempotencyCache {
    slots: Mutex<HashMap<String, Slot>>,
}

impl IdempotencyCache {
    fn slot(&self, key: &str) -> Slot {
        self.slots.lock().unwrap_or_else(|p| p.into_inner()).entry(key.to_string()).or_default().clone()
    }
}

fn fingerprint(method: &Method, uri: &str, body: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(method.as_str());
    h.update([0]);
    h.update(uri);
    h.update([0]);
    h.update(body);
    hex::encode(h.finalize())
}

fn replay(stored: &Stored) -> Response {
    let mut response = Response::new(Body::from(stored.body.clone()));
    *response.status_mut() = stored.status;
    *response.headers_mut() = stored.headers.clone();
    response.headers_mut().insert(REPLAY_HEADER, HeaderValue::from_static("true"));
    response
}

pub async fn layer(State(cache): State<Arc<IdempotencyCache>>, request: Request, next: Next) -> Response {
    let key = match request.headers().get(KEY_HEADER).map(|v| v.to_str()) {
        None => return next.run(request).await,
        Some(Ok(k)) if !k.trim().is_empty() => k.trim().to_string(),
        Some(_) => return ApiError::bad_request("invalid Idempotency-Key header").into_response(),
    };
    if matches!(*request.method(), Method::GET | Method::HEAD | Method::OPTIONS) {
        return next.run(request).await;
    }
    let (parts, body) = request.into_parts();
    let Ok(body) = to_bytes(body, MAX_BODY).await else {
        return ApiError::bad_request("request body too large or unreadable").into_response();
    };
    let print = fingerprint(&parts.method, &parts.uri.to_string(), &body);

    let slot = cache.slot(&key);
    let mut held = slot.lock().await;
    if let Some(stored) = held.as_ref() {
        if stored.fingerprint != print {
            return ApiError::conflict("Idempotency-Key was already used for a different request")
                .with_detail(serde_json::json!({ "key": key }))
                .into_response();
        }
        return replay(stored);
    }
    let response = next.run(Request::from_parts(parts, Body::from(body))).await;
    let (parts, body) = response.into_parts();
    let Ok(body) = to_bytes(body, usize::MAX).await else {
        return ApiError::internal("response body unreadable").into_response();
    };
    if !parts.status.is_server_error() {
        *held = Some(Stored { fingerprint: print, status: parts.status, headers: parts.headers.clone(), body: body.clone() });
    }
    Response::from_parts(parts, Body::from(body))
}
