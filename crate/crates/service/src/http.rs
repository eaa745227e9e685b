//! HTTP JSON API over a [`ServiceHandle`].
//!
//! | Method | Path | Body |
//! |---|---|---|
//! | POST | `/api/run/start`, `/api/run/stop` | |
//! | POST | `/api/fsm/start`, `/api/fsm/stop` | |
//! | POST | `/api/camera/start`, `/api/camera/stop` | |
//! | POST | `/api/pose/start`, `/api/pose/stop` | |
//! | POST | `/api/monitor/start`, `/api/monitor/stop` | |
//! | POST | `/api/record` | `{"on": bool}` |
//! | POST | `/api/replay/open` | `{"path": string}` or empty for the latest session |
//! | POST | `/api/replay/control` | `{"action": "play"\|"pause"\|"seek"\|"speed", "value": number}` |
//! | POST | `/api/replay/close` | |
//! | GET | `/api/state` | |
//! | GET | `/api/sessions` | |
//! | GET | `/api/telemetry` | JSON lines, one event per line |
//!
//! Commands answer `200 {"status": "applied"|"noop", "state": ...}` or an
//! error status with `{"error": code, "message": text}`.

use std::path::PathBuf;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cobot_safety::recording::{self, SessionRecording};
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::controller::{Ack, ApiError, Command, ReplayAction};
use crate::driver::ServiceHandle;

#[derive(Clone)]
struct AppState {
    handle: ServiceHandle,
    data_dir: PathBuf,
}

pub fn router(handle: ServiceHandle, data_dir: impl Into<PathBuf>) -> Router {
    let simple = |command: Command| {
        post(move |State(app): State<AppState>| async move { respond(app.handle.call(command).await) })
    };
    Router::new()
        .route("/api/run/start", simple(Command::RunStart))
        .route("/api/run/stop", simple(Command::RunStop))
        .route("/api/fsm/start", simple(Command::FsmStart))
        .route("/api/fsm/stop", simple(Command::FsmStop))
        .route("/api/camera/start", simple(Command::CameraStart))
        .route("/api/camera/stop", simple(Command::CameraStop))
        .route("/api/pose/start", simple(Command::PoseStart))
        .route("/api/pose/stop", simple(Command::PoseStop))
        .route("/api/monitor/start", simple(Command::MonitorStart))
        .route("/api/monitor/stop", simple(Command::MonitorStop))
        .route("/api/replay/close", simple(Command::ReplayClose))
        .route("/api/record", post(record))
        .route("/api/replay/open", post(replay_open))
        .route("/api/replay/control", post(replay_control))
        .route("/api/state", get(state))
        .route("/api/sessions", get(sessions))
        .route("/api/telemetry", get(telemetry))
        .with_state(AppState {
            handle,
            data_dir: data_dir.into(),
        })
}

fn status_of(e: &ApiError) -> StatusCode {
    match e {
        ApiError::InvalidTransition { .. } | ApiError::DependencyNotRunning { .. } => {
            StatusCode::CONFLICT
        }
        ApiError::InvalidArgument(_) => StatusCode::BAD_REQUEST,
        ApiError::SessionNotFound(_) => StatusCode::NOT_FOUND,
        ApiError::Recording(recording::RecordingError::Io(_)) => StatusCode::INTERNAL_SERVER_ERROR,
        ApiError::Recording(_) | ApiError::Replay(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ApiError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
    }
}

fn error_response(e: ApiError) -> Response {
    let mut body = json!({ "error": e.code(), "message": e.to_string() });
    if let ApiError::Recording(recording::RecordingError::Validation { sample, line, report, .. }) = &e {
        body["sample"] = json!(sample);
        body["line"] = json!(line);
        body["report"] = json!(report);
    }
    (status_of(&e), Json(body)).into_response()
}

fn respond(result: Result<Ack, ApiError>) -> Response {
    match result {
        Ok(ack) => {
            let status = if ack.changed { "applied" } else { "noop" };
            let mut body = json!({ "status": status, "state": ack.state });
            if let Some(detail) = ack.detail {
                body["detail"] = json!(detail);
            }
            Json(body).into_response()
        }
        Err(e) => error_response(e),
    }
}

/// Parses an optional JSON body; malformed input is a typed 400.
fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::InvalidArgument(e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordBody {
    on: Option<bool>,
}

async fn record(State(app): State<AppState>, body: Bytes) -> Response {
    let on = match parse_body::<RecordBody>(&body) {
        Ok(RecordBody { on: Some(on) }) => on,
        Ok(_) => return error_response(ApiError::InvalidArgument("missing field `on`".into())),
        Err(e) => return error_response(e),
    };
    respond(app.handle.call(Command::Record(on)).await)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpenBody {
    path: Option<PathBuf>,
}

async fn replay_open(State(app): State<AppState>, body: Bytes) -> Response {
    match parse_body::<OpenBody>(&body) {
        Ok(b) => respond(app.handle.call(Command::ReplayOpen(b.path)).await),
        Err(e) => error_response(e),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlBody {
    action: Option<String>,
    value: Option<f64>,
}

fn replay_action(body: ControlBody) -> Result<ReplayAction, ApiError> {
    let need_value = |what: &str| {
        body.value
            .ok_or_else(|| ApiError::InvalidArgument(format!("`{what}` needs a numeric `value`")))
    };
    match body.action.as_deref() {
        Some("play") => Ok(ReplayAction::Play),
        Some("pause") => Ok(ReplayAction::Pause),
        Some("seek") => Ok(ReplayAction::Seek(need_value("seek")?)),
        Some("speed") => Ok(ReplayAction::Speed(need_value("speed")?)),
        Some(other) => Err(ApiError::InvalidArgument(format!(
            "unknown action `{other}`; expected play, pause, seek or speed"
        ))),
        None => Err(ApiError::InvalidArgument("missing field `action`".into())),
    }
}

async fn replay_control(State(app): State<AppState>, body: Bytes) -> Response {
    match parse_body::<ControlBody>(&body).and_then(replay_action) {
        Ok(action) => respond(app.handle.call(Command::ReplayControl(action)).await),
        Err(e) => error_response(e),
    }
}

async fn state(State(app): State<AppState>) -> Response {
    Json(app.handle.state()).into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionInfo {
    pub path: PathBuf,
    pub file_name: String,
    pub valid: bool,
    pub created_unix: Option<i64>,
    pub sample_count: Option<usize>,
    pub duration_s: Option<f64>,
    pub period_count: Option<usize>,
    pub error: Option<String>,
}

impl SessionInfo {
    fn from_load(path: PathBuf, loaded: Result<SessionRecording, recording::RecordingError>) -> Self {
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match loaded {
            Ok(rec) => {
                let periods = rec.safety_periods().ok().map(|p| p.len());
                SessionInfo {
                    path,
                    file_name,
                    valid: true,
                    created_unix: Some(rec.meta.created_unix),
                    sample_count: Some(rec.samples.len()),
                    duration_s: Some(rec.duration()),
                    period_count: periods,
                    error: None,
                }
            }
            Err(e) => SessionInfo {
                path,
                file_name,
                valid: false,
                created_unix: None,
                sample_count: None,
                duration_s: None,
                period_count: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// Every session file in `dir`, oldest first. Unreadable files are listed
/// with their error.
pub fn list_sessions(dir: &std::path::Path) -> std::io::Result<Vec<SessionInfo>> {
    if !dir.exists() {
        return Ok(vec![]);
    }
    Ok(recording::list_sessions(dir)?
        .into_iter()
        .map(|path| {
            let loaded = recording::load(&path);
            SessionInfo::from_load(path, loaded)
        })
        .collect())
}

async fn sessions(State(app): State<AppState>) -> Response {
    let dir = app.data_dir.clone();
    match tokio::task::spawn_blocking(move || list_sessions(&dir)).await {
        Ok(Ok(list)) => Json(list).into_response(),
        Ok(Err(e)) => error_response(ApiError::Recording(e.into())),
        Err(e) => error_response(ApiError::Unavailable(e.to_string())),
    }
}

async fn telemetry(State(app): State<AppState>) -> Response {
    let lines = app
        .handle
        .subscribe()
        .map(|event| Ok::<_, std::convert::Infallible>(event.to_json_line()));
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(lines))
        .expect("static headers are valid")
}
