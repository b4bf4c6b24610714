//! Local HTTP front end for an [`EdgeStore`].
//!
//! | method | path            | body / headers                         | success            |
//! |--------|-----------------|----------------------------------------|--------------------|
//! | PUT    | `/objects`      | container bytes, `x-owner-gid` header  | 201 `{object_id}`  |
//! | POST   | `/tokens`       | `{"object_id": .., "ttl_secs": ..}`    | 201 issued token   |
//! | GET    | `/once/:token`  |                                        | 200 container bytes|
//!
//! Every failed redemption answers `410 Gone` with the body `gone`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::{EdgeError, EdgeStore, ObjectId, Redemption};

pub const GONE_BODY: &str = "gone";
const MAX_BODY: usize = 512 * 1024 * 1024;

#[derive(Debug, Deserialize)]
struct TokenRequest {
    object_id: ObjectId,
    #[serde(default)]
    ttl_secs: Option<i64>,
}

#[derive(Debug, Serialize)]
struct PutResponse {
    object_id: ObjectId,
}

pub fn router(store: Arc<EdgeStore>) -> Router {
    Router::new()
        .route("/objects", put(put_object))
        .route("/tokens", post(issue_token))
        .route("/once/:token", get(redeem))
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(store)
}

/// Bind and serve until the process is stopped.
pub async fn serve(store: Arc<EdgeStore>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}

fn error_response(e: EdgeError) -> Response {
    let status = match e {
        EdgeError::Malformed(_) | EdgeError::InvalidTtl => StatusCode::BAD_REQUEST,
        EdgeError::UnknownObject(_) => StatusCode::NOT_FOUND,
        EdgeError::Io(_) | EdgeError::Journal { .. } => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (status, e.to_string()).into_response()
}

async fn put_object(State(store): State<Arc<EdgeStore>>, headers: HeaderMap, body: Bytes) -> Response {
    let Some(owner) = headers.get("x-owner-gid").and_then(|v| v.to_str().ok()).filter(|s| !s.is_empty()) else {
        return (StatusCode::BAD_REQUEST, "missing x-owner-gid header").into_response();
    };
    match store.put_object(owner, &body) {
        Ok(object_id) => (StatusCode::CREATED, Json(PutResponse { object_id })).into_response(),
        Err(e) => error_response(e),
    }
}

async fn issue_token(State(store): State<Arc<EdgeStore>>, Json(req): Json<TokenRequest>) -> Response {
    let ttl = req.ttl_secs.map(Duration::seconds);
    match store.issue_token(&req.object_id, ttl) {
        Ok(t) => (StatusCode::CREATED, Json(t)).into_response(),
        Err(e) => error_response(e),
    }
}

async fn redeem(State(store): State<Arc<EdgeStore>>, Path(token): Path<String>) -> Response {
    match store.redeem(&token) {
        Ok(Redemption::Ciphertext(bytes)) => {
            (StatusCode::OK, [(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
        }
        Ok(Redemption::Gone) => gone(),
        Err(e) => error_response(e),
    }
}

fn gone() -> Response {
    (StatusCode::GONE, [(header::CONTENT_TYPE, "text/plain")], GONE_BODY).into_response()
}
