//! The HTTP surface, exercised in-process through the router.

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cobot_safety::config::SceneConfig;
use cobot_safety::recording::{to_yaml_string, SessionRecording};
use cobot_safety::sim::simulate_session;
use cobot_safety_service::{driver, http, Controller};
use futures::StreamExt;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn app(dir: &std::path::Path) -> Router {
    let controller = Controller::with_clock(SceneConfig::default(), dir, Box::new(|| 1_700_000_000));
    let (handle, _task) = driver::spawn(controller);
    http::router(handle, dir)
}

async fn call(app: &Router, method: &str, path: &str, body: &str) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn write_session(dir: &std::path::Path, name: &str) -> SessionRecording {
    let rec = simulate_session(&SceneConfig::default(), 200, 1_600_000_000);
    std::fs::write(dir.join(name), to_yaml_string(&rec)).unwrap();
    rec
}

#[tokio::test]
async fn fresh_state_is_idle() {
    let dir = tempfile::tempdir().unwrap();
    let (status, body) = call(&app(dir.path()), "GET", "/api/state", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["mode"], "idle");
    for key in ["camera_on", "pose_on", "monitor_on", "recording", "fsm_running"] {
        assert_eq!(body[key], false, "{key}");
    }
}

#[tokio::test]
async fn run_start_is_idempotent_and_fsm_is_gated() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, "POST", "/api/fsm/start", "").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "invalid_transition");

    let (_, first) = call(&app, "POST", "/api/run/start", "").await;
    let (_, second) = call(&app, "POST", "/api/run/start", "").await;
    assert_eq!(first["status"], "applied");
    assert_eq!(second["status"], "noop");
    assert_eq!(second["state"]["mode"], "live_running");

    let (status, body) = call(&app, "POST", "/api/fsm/start", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["state"]["fsm_running"], true);
}

#[tokio::test]
async fn stage_dependencies() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, "POST", "/api/pose/start", "").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "dependency_not_running");
    for path in ["/api/camera/start", "/api/pose/start", "/api/monitor/start"] {
        assert_eq!(call(&app, "POST", path, "").await.0, StatusCode::OK);
    }
}

#[tokio::test]
async fn malformed_bodies_are_typed_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for (path, body) in [
        ("/api/record", "{"),
        ("/api/record", "{}"),
        ("/api/record", r#"{"on": "yes"}"#),
        ("/api/replay/control", r#"{"action": "rewind"}"#),
        ("/api/replay/control", r#"{"action": "seek"}"#),
        ("/api/replay/open", r#"{"file": "x"}"#),
    ] {
        let (status, json) = call(&app, "POST", path, body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{path} {body}");
        assert_eq!(json["error"], "invalid_argument");
    }
}

#[tokio::test]
async fn replay_open_reports_missing_and_invalid_files() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, json) = call(&app, "POST", "/api/replay/open", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(json["error"], "session_not_found");

    std::fs::write(dir.path().join("session-1.yaml"), "meta: [1, 2\n").unwrap();
    let (status, json) = call(&app, "POST", "/api/replay/open", "").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json["error"], "parse_error");
}

#[tokio::test]
async fn replay_open_control_and_sessions() {
    let dir = tempfile::tempdir().unwrap();
    write_session(dir.path(), "session-1600000000.yaml");
    let app = app(dir.path());

    let (status, sessions) = call(&app, "GET", "/api/sessions", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(sessions[0]["sample_count"], 200);
    assert_eq!(sessions[0]["period_count"], 1);
    assert!((sessions[0]["duration_s"].as_f64().unwrap() - 9.95).abs() < 1e-9);

    let (status, opened) = call(&app, "POST", "/api/replay/open", "").await;
    assert_eq!(status, StatusCode::OK, "{opened}");
    assert_eq!(opened["state"]["mode"], "replaying");
    let (_, seek) = call(&app, "POST", "/api/replay/control", r#"{"action": "seek", "value": 0.07}"#).await;
    assert_eq!(seek["state"]["replay"]["cursor"], 1);
    let (status, json) = call(&app, "POST", "/api/run/start", "").await;
    assert_eq!(status, StatusCode::CONFLICT, "{json}");
    let (_, closed) = call(&app, "POST", "/api/replay/close", "").await;
    assert_eq!(closed["state"]["mode"], "idle");
}

#[tokio::test]
async fn telemetry_opens_with_state_and_streams_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    call(&app, "POST", "/api/run/start", "").await;
    let response = app
        .clone()
        .oneshot(Request::get("/api/telemetry").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(response.headers()["content-type"], "application/x-ndjson");
    let mut body = response.into_body().into_data_stream();
    let mut text = String::new();
    while text.matches('\n').count() < 3 {
        let chunk = body.next().await.unwrap().unwrap();
        text.push_str(std::str::from_utf8(&chunk).unwrap());
    }
    let events: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events[0]["type"], "state_changed");
    assert_eq!(events[0]["state"]["mode"], "live_running");
    assert_eq!(events[1]["type"], "frame");
    assert_eq!(events[1]["origin"], "live");
    assert!(events[1]["frame"]["flag"].is_null(), "monitor is off");
}
