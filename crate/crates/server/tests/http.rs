use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use dictseg::io::{decode_label_png, encode_grid_png, encode_tiff_u8};
use dictseg::phantom::{two_texture, TextureParams};
use dictseg::transfer::TrainedModel;
use dictseg_server::app::{BatchStatus, JobState, SessionInfo};
use dictseg_server::routes::{ModelReply, RevisionReply};
use dictseg_server::{router, AppState, Limits};
use futures::StreamExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const QUERY: &str = "patch_size=5&branching=3&layers=2&iterations=4&seed=1&classes=2&subsample=0";

fn app() -> Router {
    router(AppState::new(Limits {
        max_wait: Duration::from_secs(20),
        ..Limits::default()
    }))
}

fn image_png() -> Vec<u8> {
    let p = two_texture(&TextureParams { width: 40, height: 32, ..Default::default() }).unwrap();
    encode_grid_png(&p.image).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, headers, body)
}

fn post(uri: &str, body: impl Into<Body>) -> Request<Body> {
    Request::post(uri).body(body.into()).unwrap()
}

fn post_json(uri: &str, v: Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(v.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

async fn ready_session(app: &Router) -> SessionInfo {
    let (status, _, body) = send(app, post(&format!("/sessions?{QUERY}"), image_png())).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    let info: SessionInfo = serde_json::from_slice(&body).unwrap();
    for _ in 0..400 {
        let (_, _, body) = send(app, get(&format!("/sessions/{}", info.id))).await;
        let now: SessionInfo = serde_json::from_slice(&body).unwrap();
        if now.ready && now.computed_revision.is_some() {
            return now;
        }
        assert!(now.error.is_none(), "{:?}", now.error);
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session never became ready");
}

fn strokes() -> Value {
    json!({"strokes": [
        {"points": [[3, 3], [3, 28]], "radius": 1, "class": 1},
        {"points": [[36, 3], [36, 28]], "radius": 1, "class": 2}
    ]})
}

#[tokio::test]
async fn interactive_round_trip() {
    let app = app();
    let info = ready_session(&app).await;
    assert_eq!((info.width, info.height), (40, 32));
    assert!(info.timing.nnz.unwrap() > 0);
    let id = info.id;

    let (status, _, body) = send(&app, post_json(&format!("/sessions/{id}/strokes"), strokes())).await;
    assert_eq!(status, StatusCode::OK);
    let rev: RevisionReply = serde_json::from_slice(&body).unwrap();
    assert_eq!(rev.revision, 1);

    let uri = format!("/sessions/{id}/result?kind=segmentation&rev=1");
    let (status, headers, first) = send(&app, get(&uri)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "image/png");
    assert_eq!(headers["x-revision"], "1");
    let (shape, labels) = decode_label_png(&first).unwrap();
    assert_eq!((shape.width, shape.height), (40, 32));
    assert_eq!(labels[3 * 40 + 3], 1);
    assert_eq!(labels[3 * 40 + 36], 2);
    let (_, _, again) = send(&app, get(&uri)).await;
    assert_eq!(first, again);

    let (status, _, prob) = send(&app, get(&format!("/sessions/{id}/result?kind=probability&class=2&rev=1"))).await;
    assert_eq!(status, StatusCode::OK);
    assert!(prob.starts_with(b"\x89PNG"));
    let (_, _, marks) = send(&app, get(&format!("/sessions/{id}/result?kind=marks&rev=1"))).await;
    let (_, marks) = decode_label_png(&marks).unwrap();
    assert_eq!(marks.iter().filter(|&&m| m == 2).count(), 26 * 3 + 2);

    let (status, _, body) = send(&app, post(&format!("/sessions/{id}/undo"), Body::empty())).await;
    assert_eq!(status, StatusCode::OK);
    let rev: RevisionReply = serde_json::from_slice(&body).unwrap();
    assert_eq!(rev.revision, 2);
    let (_, headers, marks) = send(&app, get(&format!("/sessions/{id}/result?kind=marks&rev=2"))).await;
    assert_eq!(headers["x-revision"], "2");
    let (_, marks) = decode_label_png(&marks).unwrap();
    assert!(marks.iter().all(|&m| m == 0));
}

#[tokio::test]
async fn export_then_batch() {
    let app = app();
    let id = ready_session(&app).await.id;
    send(&app, post_json(&format!("/sessions/{id}/strokes"), strokes())).await;

    let (status, headers, model_bytes) = send(&app, post(&format!("/sessions/{id}/export"), Body::empty())).await;
    assert_eq!(status, StatusCode::OK);
    let model_id: u64 = headers["x-model-id"].to_str().unwrap().parse().unwrap();
    let model = TrainedModel::from_bytes(&model_bytes).unwrap();
    assert_eq!(model.classes(), 2);
    assert_eq!(model.metadata().marked_pixels, 2 * (26 * 3 + 2));

    let (status, _, body) = send(&app, post("/models", model_bytes.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    let reply: ModelReply = serde_json::from_slice(&body).unwrap();
    assert_ne!(reply.id, model_id);
    assert_eq!(reply.patch_size, 5);
    let (_, _, downloaded) = send(&app, get(&format!("/models/{}", reply.id))).await;
    assert_eq!(downloaded, model_bytes);

    let page: Vec<u8> = (0..40 * 32).map(|i| if i % 40 < 20 { 200 } else { 60 }).collect();
    let stack = encode_tiff_u8(dictseg::grid::GridShape::new(40, 32), &[page.clone(), page]).unwrap();
    let uri = format!("/batch?model={model_id}&centre_class=2&min_component_class=2&min_component_size=3");
    let (status, _, body) = send(&app, post(&uri, stack)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&body));
    let job: BatchStatus = serde_json::from_slice(&body).unwrap();
    assert_eq!(job.total, 2);
    let done = loop {
        let (_, _, body) = send(&app, get(&format!("/batch/{}", job.id))).await;
        let st: BatchStatus = serde_json::from_slice(&body).unwrap();
        match st.state {
            JobState::Done => break st,
            JobState::Failed => panic!("{:?}", st.error),
            _ => tokio::time::sleep(Duration::from_millis(10)).await,
        }
    };
    assert_eq!(done.done, 2);
    for name in ["labels.tif", "probability_c1.tif", "probability_c2.tif", "centres.csv"] {
        assert!(done.outputs.iter().any(|o| o == name), "{name}");
        let (status, _, body) = send(&app, get(&format!("/batch/{}/files/{name}", job.id))).await;
        assert_eq!(status, StatusCode::OK);
        assert!(!body.is_empty());
    }
    let labels = dictseg::io::decode_tiff(&send(&app, get(&format!("/batch/{}/files/labels.tif", job.id))).await.2).unwrap();
    assert_eq!(labels.len(), 2);
    assert_eq!(labels[0], labels[1]);
}

#[tokio::test]
async fn event_stream_reports_readiness() {
    let app = app();
    let id = ready_session(&app).await.id;
    let resp = app.clone().oneshot(get(&format!("/sessions/{id}/events"))).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body().into_data_stream();
    let chunk = body.next().await.unwrap().unwrap();
    let text = String::from_utf8(chunk.to_vec()).unwrap();
    let data = text.lines().find_map(|l| l.strip_prefix("data: ")).unwrap();
    let event: Value = serde_json::from_str(data).unwrap();
    assert_eq!(event["ready"], true);
    assert_eq!(event["kind"], "ready");
    assert!(event["timing"]["build_ms"].as_f64().unwrap() > 0.0);

    send(&app, post_json(&format!("/sessions/{id}/strokes"), strokes())).await;
    let next = tokio::time::timeout(Duration::from_secs(20), body.next()).await.unwrap().unwrap().unwrap();
    let text = String::from_utf8(next.to_vec()).unwrap();
    let data = text.lines().find_map(|l| l.strip_prefix("data: ")).unwrap();
    let event: Value = serde_json::from_str(data).unwrap();
    assert_eq!(event["kind"], "result");
    assert_eq!(event["revision"], 1);
    assert!(event["timing"]["update_ms"].is_number());
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let app = app();
    let (status, _, _) = send(&app, post(&format!("/sessions?{QUERY}"), b"not an image".to_vec())).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (status, _, _) = send(&app, post("/sessions?patch_size=41", image_png())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = send(&app, post("/sessions?branching=1", image_png())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = send(&app, get("/sessions/999")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = ready_session(&app).await.id;
    let bad = json!({"strokes": [{"points": [[1, 1]], "radius": 1, "class": 3}]});
    let (status, _, body) = send(&app, post_json(&format!("/sessions/{id}/strokes"), bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8_lossy(&body).contains("unknown class"));
    let (status, _, _) = send(&app, post(&format!("/sessions/{id}/undo"), Body::empty())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _, _) = send(&app, get(&format!("/sessions/{id}/result?kind=probability&class=5"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = send(&app, get(&format!("/sessions/{id}/result?rev=50&wait_ms=20"))).await;
    assert_eq!(status, StatusCode::REQUEST_TIMEOUT);
    let (status, _, _) = send(&app, post("/models", b"DSEGDICT".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = send(&app, post("/batch?model=12345", image_png())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn strokes_before_ready_are_rejected() {
    let app = app();
    let big = two_texture(&TextureParams { width: 160, height: 160, ..Default::default() }).unwrap();
    let (status, _, body) = send(
        &app,
        post("/sessions?patch_size=9&branching=5&layers=4&subsample=0", encode_grid_png(&big.image).unwrap()),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let info: SessionInfo = serde_json::from_slice(&body).unwrap();
    if !info.ready {
        let (status, _, _) = send(&app, post_json(&format!("/sessions/{}/strokes", info.id), strokes())).await;
        assert!(status == StatusCode::CONFLICT || status == StatusCode::OK);
    }
    let (status, _, _) = send(&app, Request::delete(format!("/sessions/{}", info.id)).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
}

#[tokio::test]
async fn session_limit_is_enforced() {
    let app = router(AppState::new(Limits {
        max_sessions: 1,
        ..Limits::default()
    }));
    let (status, _, body) = send(&app, post(&format!("/sessions?{QUERY}"), image_png())).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, _, _) = send(&app, post(&format!("/sessions?{QUERY}"), image_png())).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let info: SessionInfo = serde_json::from_slice(&body).unwrap();
    send(&app, Request::delete(format!("/sessions/{}", info.id)).body(Body::empty()).unwrap()).await;
    let (status, _, _) = send(&app, post(&format!("/sessions?{QUERY}"), image_png())).await;
    assert_eq!(status, StatusCode::CREATED);
}
