mod common;

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use nailguard_service::{router, CaseStore, ManualClock};
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "xBOUNDARYx";

fn app(token: Option<&str>) -> Router {
    let t = common::triage(CaseStore::in_memory(), Arc::new(ManualClock::new(0, 10)));
    t.activate("color").unwrap();
    router(Arc::new(t), token.map(String::from))
}

fn multipart(bytes: &[u8]) -> Body {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"nail.png\"\r\nContent-Type: image/png\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    Body::from(body)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn submit(rgb: [u8; 3]) -> Request<Body> {
    Request::post("/cases")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(multipart(&common::png(rgb)))
        .unwrap()
}

fn post_json(uri: &str, v: Value) -> Request<Body> {
    Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(v.to_string())).unwrap()
}

#[tokio::test]
async fn submit_queue_review_flow() {
    let app = app(None);
    let (s, health) = call(&app, get("/health")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(health, json!({"status": "ok", "active_model": "color"}));

    let mut ids = Vec::new();
    for rgb in [[220, 20, 20], [20, 220, 20], [20, 20, 220]] {
        let (s, body) = call(&app, submit(rgb)).await;
        assert_eq!(s, StatusCode::CREATED, "{body}");
        assert!(body["prediction"]["probs"].as_array().unwrap().len() == 6);
        assert!(body["priority"].is_number());
        ids.push(body["case_id"].as_u64().unwrap());
    }
    let (_, queue) = call(&app, get("/cases?status=pending")).await;
    let queue = queue.as_array().unwrap();
    assert_eq!(queue.len(), 3);
    let prios: Vec<f64> = queue.iter().map(|c| c["priority_score"].as_f64().unwrap()).collect();
    assert!(prios.windows(2).all(|w| w[0] >= w[1]), "{prios:?}");

    let first = queue[0]["case_id"].as_u64().unwrap();
    let (s, reviewed) = call(&app, post_json(&format!("/cases/{first}/review"), json!({"decision": "confirm"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(reviewed["status"], "reviewed");
    let (s, _) = call(&app, post_json(&format!("/cases/{first}/review"), json!({"decision": "confirm"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, queue) = call(&app, get("/cases")).await;
    assert_eq!(queue.as_array().unwrap().len(), 2);
    assert!(queue.as_array().unwrap().iter().all(|c| c["case_id"] != first));
    let (_, done) = call(&app, get("/cases?status=reviewed")).await;
    assert_eq!(done.as_array().unwrap().len(), 1);

    let other = ids.iter().find(|&&i| i != first).unwrap();
    let (s, err) = call(&app, post_json(&format!("/cases/{other}/review"), json!({"decision": "override"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "validation");
    let (s, _) = call(
        &app,
        post_json(
            &format!("/cases/{other}/review"),
            json!({"decision": "override", "override_category": "pitting", "note": "dents"}),
        ),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, case) = call(&app, get(&format!("/cases/{other}"))).await;
    assert_eq!(case["review"]["override_category"], "pitting");
    assert_eq!(case["review"]["note"], "dents");
}

#[tokio::test]
async fn explanations() {
    let app = app(None);
    let (_, body) = call(&app, submit([40, 40, 200])).await;
    let id = body["case_id"].as_u64().unwrap();
    let (s, a) = call(&app, get(&format!("/cases/{id}/explanation?method=gradcam&target=healthy_nail"))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a["method"], "gradcam");
    assert_eq!(a["values"].as_array().unwrap().len(), 224 * 224);
    let (_, b) = call(&app, get(&format!("/cases/{id}/explanation?method=gradcam&target=onychogryphosis"))).await;
    assert_ne!(a["overlay_png_base64"], b["overlay_png_base64"]);
    let (_, again) = call(&app, get(&format!("/cases/{id}/explanation?method=gradcam&target=healthy_nail"))).await;
    assert_eq!(a, again);
    let (s, _) = call(&app, get(&format!("/cases/{id}/explanation?method=lime"))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, get("/cases/77/explanation")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn models_and_activation() {
    let app = app(None);
    let (_, models) = call(&app, get("/models")).await;
    assert_eq!(models.as_array().unwrap().len(), 2);
    let (s, _) = call(&app, Request::post("/models/color_b/activate").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let (_, health) = call(&app, get("/health")).await;
    assert_eq!(health["active_model"], "color_b");
    let (s, _) = call(&app, Request::post("/models/nope/activate").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, body) = call(&app, submit([1, 2, 3])).await;
    let (_, case) = call(&app, get(&format!("/cases/{}", body["case_id"]))).await;
    assert_eq!(case["model_id"], "color_b");
}

#[tokio::test]
async fn errors() {
    let app = app(None);
    let (s, _) = call(&app, get("/cases/9")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, get("/cases/abc")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, get("/cases?status=weird")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let bad = Request::post("/cases")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(multipart(b"not an image"))
        .unwrap();
    let (s, err) = call(&app, bad).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["message"].is_string());

    let idle = router(Arc::new(common::triage(CaseStore::in_memory(), Arc::new(ManualClock::new(0, 1)))), None);
    let (s, _) = call(&idle, submit([1, 1, 1])).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn bearer_token() {
    let app = app(Some("s3cret"));
    let (s, _) = call(&app, get("/health")).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, get("/cases")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let wrong = Request::get("/cases").header(header::AUTHORIZATION, "Bearer nope").body(Body::empty()).unwrap();
    assert_eq!(call(&app, wrong).await.0, StatusCode::UNAUTHORIZED);
    let right = Request::get("/cases").header(header::AUTHORIZATION, "Bearer s3cret").body(Body::empty()).unwrap();
    assert_eq!(call(&app, right).await.0, StatusCode::OK);
}
