#![cfg(feature = "http")]

mod common;

use std::sync::Arc;

use abmse::clock::ManualClock;
use abmse::edge_store::http::{router, GONE_BODY};
use abmse::edge_store::EdgeStore;
use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::Duration;
use common::{container, start};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    content_type: Option<String>,
    body: Vec<u8>,
}

async fn call(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_owned());
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply { status, content_type, body }
}

fn get(path: &str) -> Request<Body> {
    Request::get(path).body(Body::empty()).unwrap()
}

fn issue(object_id: &str, ttl: Option<i64>) -> Request<Body> {
    let body = serde_json::json!({ "object_id": object_id, "ttl_secs": ttl });
    Request::post("/tokens").header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

#[tokio::test]
async fn upload_issue_redeem_and_uniform_gone() {
    let tmp = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(start()));
    let store = EdgeStore::open_with(tmp.path(), clock.clone(), Box::new(ChaCha20Rng::seed_from_u64(1))).unwrap();
    let app = router(Arc::new(store));
    let ct = container(9, 2048);

    let no_owner = call(&app, Request::put("/objects").body(Body::from(ct.clone())).unwrap()).await;
    assert_eq!(no_owner.status, StatusCode::BAD_REQUEST);
    let put =
        call(&app, Request::put("/objects").header("x-owner-gid", "annie").body(Body::from(ct.clone())).unwrap()).await;
    assert_eq!(put.status, StatusCode::CREATED);
    let put: serde_json::Value = serde_json::from_slice(&put.body).unwrap();
    let object_id = put["object_id"].as_str().unwrap().to_owned();

    let token_of = |r: Reply| {
        assert_eq!(r.status, StatusCode::CREATED);
        let v: serde_json::Value = serde_json::from_slice(&r.body).unwrap();
        v["token"].as_str().unwrap().to_owned()
    };
    let used = token_of(call(&app, issue(&object_id, None)).await);
    let expiring = token_of(call(&app, issue(&object_id, Some(60))).await);
    assert_eq!(call(&app, issue(&"00".repeat(32), None)).await.status, StatusCode::NOT_FOUND);

    let first = call(&app, get(&format!("/once/{used}"))).await;
    assert_eq!(first.status, StatusCode::OK);
    assert_eq!(first.body, ct);

    clock.advance(Duration::seconds(61));
    let replies = [
        call(&app, get(&format!("/once/{used}"))).await,
        call(&app, get(&format!("/once/{expiring}"))).await,
        call(&app, get(&format!("/once/{}", "ab".repeat(32)))).await,
        call(&app, get("/once/not-even-hex")).await,
    ];
    for r in &replies {
        assert_eq!(r.status, StatusCode::GONE);
        assert_eq!(r.body, GONE_BODY.as_bytes());
        assert_eq!(r.content_type, replies[0].content_type);
    }
}
