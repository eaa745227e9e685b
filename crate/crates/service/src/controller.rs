//! The control-plane state machine.
//!
//! [`Controller`] owns the live loop, the recorder and the replay session.
//! Every button press becomes a [`Command`] applied between ticks, so all
//! transitions are totally ordered. Telemetry produced along the way is
//! queued in an outbox and drained by whoever drives the controller.

use std::fmt;
use std::path::{Path, PathBuf};

use cobot_safety::config::SceneConfig;
use cobot_safety::monitor::FlagEvent;
use cobot_safety::recording::{self, new_session_path, RecordingError};
use cobot_safety::replay::{ReplayError, ReplaySession, ReplaySummary};
use cobot_safety::sim::{FrameSink, LiveLoop, PipelineStages, RecorderSink};
use serde::Serialize;
use thiserror::Error;
use tracing::{info, warn};

use crate::telemetry::{FrameView, Origin, TelemetryEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    LiveRunning,
    Replaying,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Idle => "idle",
            Mode::LiveRunning => "live_running",
            Mode::Replaying => "replaying",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemState {
    pub mode: Mode,
    pub fsm_running: bool,
    pub camera_on: bool,
    pub pose_on: bool,
    pub monitor_on: bool,
    pub recording: bool,
    /// The file being recorded, or the file being replayed.
    pub active_session_path: Option<PathBuf>,
    /// The most recently finalized recording.
    pub last_recording: Option<PathBuf>,
    pub replay: Option<ReplaySummary>,
}

impl SystemState {
    /// Every invariant the controller promises to keep.
    pub fn check_invariants(&self) -> Result<(), String> {
        let fail = |m: &str| Err(m.to_string());
        if self.recording && self.mode != Mode::LiveRunning {
            return fail("recording outside live mode");
        }
        if self.fsm_running && self.mode != Mode::LiveRunning {
            return fail("task running outside live mode");
        }
        if self.monitor_on && !self.pose_on {
            return fail("monitor on without pose estimation");
        }
        if self.pose_on && !self.camera_on {
            return fail("pose estimation on without camera");
        }
        if self.replay.is_some() != (self.mode == Mode::Replaying) {
            return fail("replay summary present outside replay mode");
        }
        let expect_path = self.recording || self.mode == Mode::Replaying;
        if self.active_session_path.is_some() != expect_path {
            return fail("active session path out of step with mode");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "action", content = "value", rename_all = "snake_case")]
pub enum ReplayAction {
    Play,
    Pause,
    Seek(f64),
    Speed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    RunStart,
    RunStop,
    FsmStart,
    FsmStop,
    CameraStart,
    CameraStop,
    PoseStart,
    PoseStop,
    MonitorStart,
    MonitorStop,
    Record(bool),
    ReplayOpen(Option<PathBuf>),
    ReplayControl(ReplayAction),
    ReplayClose,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RunStart => "run/start",
            Command::RunStop => "run/stop",
            Command::FsmStart => "fsm/start",
            Command::FsmStop => "fsm/stop",
            Command::CameraStart => "camera/start",
            Command::CameraStop => "camera/stop",
            Command::PoseStart => "pose/start",
            Command::PoseStop => "pose/stop",
            Command::MonitorStart => "monitor/start",
            Command::MonitorStop => "monitor/stop",
            Command::Record(_) => "record",
            Command::ReplayOpen(_) => "replay/open",
            Command::ReplayControl(_) => "replay/control",
            Command::ReplayClose => "replay/close",
        }
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{command} is not allowed while {mode}")]
    InvalidTransition { command: &'static str, mode: Mode },
    #[error("{stage} requires {requires} to be running")]
    DependencyNotRunning {
        stage: &'static str,
        requires: &'static str,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("session not found: {0}")]
    SessionNotFound(String),
    #[error(transparent)]
    Recording(#[from] RecordingError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("service unavailable: {0}")]
    Unavailable(String),
}

impl ApiError {
    /// Stable machine-readable error name.
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::InvalidTransition { .. } => "invalid_transition",
            ApiError::DependencyNotRunning { .. } => "dependency_not_running",
            ApiError::InvalidArgument(_) => "invalid_argument",
            ApiError::SessionNotFound(_) => "session_not_found",
            ApiError::Recording(RecordingError::Parse { .. }) => "parse_error",
            ApiError::Recording(RecordingError::Schema(_)) => "schema_error",
            ApiError::Recording(RecordingError::Validation { .. }) => "validation_error",
            ApiError::Recording(RecordingError::Io(_)) => "io_error",
            ApiError::Recording(_) => "recording_error",
            ApiError::Replay(_) => "replay_error",
            ApiError::Unavailable(_) => "unavailable",
        }
    }
}

/// Successful response to a command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    /// `false` when the command was a no-op in the current state.
    pub changed: bool,
    pub state: SystemState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub type Clock = Box<dyn Fn() -> i64 + Send>;

fn system_clock() -> Clock {
    Box::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    })
}

pub struct Controller {
    cfg: SceneConfig,
    data_dir: PathBuf,
    clock: Clock,
    mode: Mode,
    stages: PipelineStages,
    live: Option<LiveLoop>,
    recorder: Option<RecorderSink>,
    replay: Option<ReplaySession>,
    replay_path: Option<PathBuf>,
    replay_flag: Option<bool>,
    last_recording: Option<PathBuf>,
    outbox: Vec<TelemetryEvent>,
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Controller")
            .field("data_dir", &self.data_dir)
            .field("state", &self.state())
            .finish_non_exhaustive()
    }
}

impl Controller {
    /// `cfg` must already be validated.
    pub fn new(cfg: SceneConfig, data_dir: impl Into<PathBuf>) -> Self {
        Self::with_clock(cfg, data_dir, system_clock())
    }

    /// Like [`new`](Self::new) with a custom source of session creation times.
    pub fn with_clock(cfg: SceneConfig, data_dir: impl Into<PathBuf>, clock: Clock) -> Self {
        Self {
            cfg,
            data_dir: data_dir.into(),
            clock,
            mode: Mode::Idle,
            stages: PipelineStages::default(),
            live: None,
            recorder: None,
            replay: None,
            replay_path: None,
            replay_flag: None,
            last_recording: None,
            outbox: Vec::new(),
        }
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn frame_period(&self) -> f64 {
        self.cfg.frame_period()
    }

    pub fn state(&self) -> SystemState {
        SystemState {
            mode: self.mode,
            fsm_running: self.live.as_ref().is_some_and(|l| l.fsm().is_running()),
            camera_on: self.stages.camera,
            pose_on: self.stages.pose,
            monitor_on: self.stages.monitor,
            recording: self.recorder.is_some(),
            active_session_path: match self.mode {
                Mode::Replaying => self.replay_path.clone(),
                _ => self.recorder.as_ref().map(|r| r.path().to_path_buf()),
            },
            last_recording: self.last_recording.clone(),
            replay: self.replay.as_ref().map(|r| r.summary()),
        }
    }

    /// Takes every telemetry event produced since the last call.
    pub fn drain_events(&mut self) -> Vec<TelemetryEvent> {
        std::mem::take(&mut self.outbox)
    }

    pub fn apply(&mut self, command: Command) -> Result<Ack, ApiError> {
        let name = command.name();
        let detail = match command {
            Command::RunStart => self.run_start(name)?,
            Command::RunStop => self.run_stop()?,
            Command::FsmStart => self.fsm_start(name)?,
            Command::FsmStop => self.fsm_stop(),
            Command::CameraStart => self.set_stage(Stage::Camera, true)?,
            Command::CameraStop => self.set_stage(Stage::Camera, false)?,
            Command::PoseStart => self.set_stage(Stage::Pose, true)?,
            Command::PoseStop => self.set_stage(Stage::Pose, false)?,
            Command::MonitorStart => self.set_stage(Stage::Monitor, true)?,
            Command::MonitorStop => self.set_stage(Stage::Monitor, false)?,
            Command::Record(on) => self.record(name, on)?,
            Command::ReplayOpen(path) => self.replay_open(name, path)?,
            Command::ReplayControl(action) => self.replay_control(name, action)?,
            Command::ReplayClose => self.replay_close(),
        };
        let state = self.state();
        let changed = detail.is_some();
        if changed {
            self.outbox.push(TelemetryEvent::StateChanged {
                state: state.clone(),
            });
        }
        Ok(Ack {
            changed,
            state,
            detail: detail.filter(|d| !d.is_empty()),
        })
    }

    // Command handlers return `Some(detail)` on change and `None` on no-op.

    fn run_start(&mut self, name: &'static str) -> Result<Option<String>, ApiError> {
        match self.mode {
            Mode::LiveRunning => Ok(None),
            Mode::Replaying => Err(self.invalid(name)),
            Mode::Idle => {
                let mut live = LiveLoop::new(self.cfg.clone());
                live.set_stages(self.stages);
                self.live = Some(live);
                self.mode = Mode::LiveRunning;
                info!("live loop started");
                Ok(Some(String::new()))
            }
        }
    }

    fn run_stop(&mut self) -> Result<Option<String>, ApiError> {
        if self.mode != Mode::LiveRunning {
            return Ok(None);
        }
        let finalized = self.finish_recording()?;
        self.live = None;
        self.mode = Mode::Idle;
        info!("live loop stopped");
        Ok(Some(finalized.unwrap_or_default()))
    }

    fn fsm_start(&mut self, name: &'static str) -> Result<Option<String>, ApiError> {
        let Some(live) = self.live.as_mut().filter(|_| self.mode == Mode::LiveRunning) else {
            return Err(self.invalid(name));
        };
        if live.fsm().is_running() {
            return Ok(None);
        }
        live.fsm_mut().start();
        Ok(Some(String::new()))
    }

    fn fsm_stop(&mut self) -> Option<String> {
        let live = self.live.as_mut().filter(|l| l.fsm().is_running())?;
        live.fsm_mut().stop();
        Some(String::new())
    }

    fn set_stage(&mut self, stage: Stage, on: bool) -> Result<Option<String>, ApiError> {
        let mut next = self.stages;
        match (stage, on) {
            (Stage::Camera, true) => next.camera = true,
            (Stage::Pose, true) if !next.camera => {
                return Err(ApiError::DependencyNotRunning {
                    stage: "pose",
                    requires: "camera",
                })
            }
            (Stage::Pose, true) => next.pose = true,
            (Stage::Monitor, true) if !next.pose => {
                return Err(ApiError::DependencyNotRunning {
                    stage: "monitor",
                    requires: "pose",
                })
            }
            (Stage::Monitor, true) => next.monitor = true,
            // Stopping a stage stops everything that depends on it.
            (Stage::Camera, false) => next = PipelineStages::default(),
            (Stage::Pose, false) => {
                next.pose = false;
                next.monitor = false;
            }
            (Stage::Monitor, false) => next.monitor = false,
        }
        if next == self.stages {
            return Ok(None);
        }
        self.stages = next;
        if let Some(live) = self.live.as_mut() {
            live.set_stages(next);
        }
        Ok(Some(String::new()))
    }

    fn record(&mut self, name: &'static str, on: bool) -> Result<Option<String>, ApiError> {
        if !on {
            return self.finish_recording();
        }
        if self.mode != Mode::LiveRunning {
            return Err(self.invalid(name));
        }
        if self.recorder.is_some() {
            return Ok(None);
        }
        std::fs::create_dir_all(&self.data_dir).map_err(RecordingError::from)?;
        let created = (self.clock)();
        let path = new_session_path(&self.data_dir, created);
        let sink = RecorderSink::create(&path, &self.cfg.session_meta(created))?;
        info!(path = %path.display(), "recording started");
        self.recorder = Some(sink);
        Ok(Some(path.display().to_string()))
    }

    /// Finalizes an open recording, returning its path as the detail.
    fn finish_recording(&mut self) -> Result<Option<String>, ApiError> {
        let Some(sink) = self.recorder.take() else {
            return Ok(None);
        };
        let (path, n) = sink.finish()?;
        info!(path = %path.display(), samples = n, "recording finalized");
        self.last_recording = Some(path.clone());
        Ok(Some(path.display().to_string()))
    }

    fn resolve_session(&self, path: Option<PathBuf>) -> Result<PathBuf, ApiError> {
        match path {
            None => recording::latest_session(&self.data_dir)
                .ok()
                .flatten()
                .ok_or_else(|| {
                    ApiError::SessionNotFound(format!("no sessions in {}", self.data_dir.display()))
                }),
            Some(p) if p.is_relative() && !p.exists() => Ok(self.data_dir.join(p)),
            Some(p) => Ok(p),
        }
    }

    fn replay_open(
        &mut self,
        name: &'static str,
        path: Option<PathBuf>,
    ) -> Result<Option<String>, ApiError> {
        if self.mode == Mode::LiveRunning {
            return Err(self.invalid(name));
        }
        let path = self.resolve_session(path)?;
        let rec = recording::load(&path).map_err(|e| match e {
            RecordingError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                ApiError::SessionNotFound(path.display().to_string())
            }
            other => ApiError::Recording(other),
        })?;
        if rec.samples.is_empty() {
            return Err(ApiError::InvalidArgument(format!(
                "{} holds no samples",
                path.display()
            )));
        }
        let mut session = ReplaySession::new(rec);
        self.replay_flag = None;
        let first = session.seek(0.0)?;
        self.replay = Some(session);
        self.replay_path = Some(path.clone());
        self.mode = Mode::Replaying;
        self.emit_replay_frames(first);
        info!(path = %path.display(), "replay opened");
        Ok(Some(path.display().to_string()))
    }

    fn replay_control(
        &mut self,
        name: &'static str,
        action: ReplayAction,
    ) -> Result<Option<String>, ApiError> {
        if self.mode != Mode::Replaying {
            return Err(self.invalid(name));
        }
        let session = self.replay.as_mut().expect("replay mode has a session");
        let mut frames = None;
        let changed = match action {
            ReplayAction::Play if session.is_playing() => false,
            ReplayAction::Play => {
                if session.is_finished() {
                    frames = session.seek(0.0)?;
                }
                session.play();
                true
            }
            ReplayAction::Pause if !session.is_playing() => false,
            ReplayAction::Pause => {
                session.pause();
                true
            }
            ReplayAction::Seek(t) => {
                if !(t.is_finite() && t >= 0.0) {
                    return Err(ApiError::InvalidArgument(format!(
                        "seek target must be a non-negative time, got {t}"
                    )));
                }
                frames = session.seek(t)?;
                true
            }
            ReplayAction::Speed(s) if s == session.speed() => false,
            ReplayAction::Speed(s) => {
                if !(s.is_finite() && s > 0.0) {
                    return Err(ApiError::InvalidArgument(format!(
                        "speed must be positive and finite, got {s}"
                    )));
                }
                session.set_speed(s)?;
                true
            }
        };
        if frames.is_some() {
            // A seek starts a new timeline; flag changes are relative to it.
            self.replay_flag = None;
        }
        self.emit_replay_frames(frames);
        Ok(changed.then(String::new))
    }

    fn replay_close(&mut self) -> Option<String> {
        if self.mode != Mode::Replaying {
            return None;
        }
        self.replay = None;
        self.replay_path = None;
        self.mode = Mode::Idle;
        Some(String::new())
    }

    fn invalid(&self, command: &'static str) -> ApiError {
        ApiError::InvalidTransition {
            command,
            mode: self.mode,
        }
    }

    fn emit_replay_frames(&mut self, frames: impl IntoIterator<Item = cobot_safety::replay::SceneFrame>) {
        let Some(session) = self.replay.as_ref() else {
            return;
        };
        for frame in frames {
            if self.replay_flag.is_some_and(|f| f != frame.recomputed_flag) {
                self.outbox.push(TelemetryEvent::FlagChanged {
                    origin: Origin::Replay,
                    t: frame.t,
                    flag: frame.recomputed_flag,
                    failsafe: false,
                });
            }
            self.replay_flag = Some(frame.recomputed_flag);
            let sample = &session.recording().samples[frame.index];
            self.outbox.push(TelemetryEvent::Frame {
                origin: Origin::Replay,
                frame: FrameView::replay(&frame, sample),
            });
        }
    }

    /// Advances whatever is running by one driver tick. Live mode produces
    /// exactly one frame; replay advances its clock by `wall_dt` seconds.
    pub fn tick(&mut self, wall_dt: f64) {
        match self.mode {
            Mode::Idle => {}
            Mode::LiveRunning => self.tick_live(),
            Mode::Replaying => self.tick_replay(wall_dt),
        }
    }

    fn tick_live(&mut self) {
        let monitor_on = self.stages.monitor;
        let live = self.live.as_mut().expect("live mode has a loop");
        let tick = live.tick();
        if let Some(sink) = self.recorder.as_mut() {
            if let Err(e) = sink.accept(&tick) {
                warn!(error = %e, "recorder failed");
                self.outbox
                    .push(TelemetryEvent::warning(format!("recording failed at t={}: {e}", tick.sample.t)));
            }
        }
        if monitor_on {
            match tick.event {
                FlagEvent::Unchanged => {}
                FlagEvent::Raised { t, failsafe } => self.outbox.push(TelemetryEvent::FlagChanged {
                    origin: Origin::Live,
                    t,
                    flag: true,
                    failsafe,
                }),
                FlagEvent::Cleared { t } => self.outbox.push(TelemetryEvent::FlagChanged {
                    origin: Origin::Live,
                    t,
                    flag: false,
                    failsafe: false,
                }),
            }
            if let Some(period) = tick.period {
                self.outbox.push(TelemetryEvent::PeriodClosed {
                    origin: Origin::Live,
                    period,
                });
            }
        }
        self.outbox.push(TelemetryEvent::Frame {
            origin: Origin::Live,
            frame: FrameView::live(&tick.scene, &tick.sample, tick.predicted_wrist, monitor_on),
        });
    }

    fn tick_replay(&mut self, wall_dt: f64) {
        let session = self.replay.as_mut().expect("replay mode has a session");
        let was_playing = session.is_playing();
        match session.tick(wall_dt) {
            Ok(frames) => self.emit_replay_frames(frames),
            Err(e) => {
                session.pause();
                self.outbox.push(TelemetryEvent::warning(format!("replay paused: {e}")));
            }
        }
        let session = self.replay.as_ref().expect("replay mode has a session");
        if was_playing && !session.is_playing() {
            self.outbox.push(TelemetryEvent::StateChanged { state: self.state() });
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Camera,
    Pose,
    Monitor,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn controller(dir: &Path) -> Controller {
        Controller::with_clock(SceneConfig::default(), dir, Box::new(|| 1_700_000_000))
    }

    #[test]
    fn fresh_boot_is_idle() {
        let dir = tempfile::tempdir().unwrap();
        let s = controller(dir.path()).state();
        assert_eq!(s.mode, Mode::Idle);
        assert!(!(s.camera_on || s.pose_on || s.monitor_on || s.recording || s.fsm_running));
        assert!(s.active_session_path.is_none() && s.replay.is_none());
    }

    #[test]
    fn start_running_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = controller(dir.path());
        assert!(c.apply(Command::RunStart).unwrap().changed);
        let again = c.apply(Command::RunStart).unwrap();
        assert!(!again.changed);
        assert_eq!(again.state.mode, Mode::LiveRunning);
    }

    #[test]
    fn fsm_requires_running() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = controller(dir.path());
        assert!(matches!(
            c.apply(Command::FsmStart),
            Err(ApiError::InvalidTransition { mode: Mode::Idle, .. })
        ));
    }

    #[test]
    fn pose_requires_camera() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = controller(dir.path());
        assert!(matches!(
            c.apply(Command::PoseStart),
            Err(ApiError::DependencyNotRunning { stage: "pose", requires: "camera" })
        ));
    }

    #[test]
    fn camera_stop_cascades() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = controller(dir.path());
        for cmd in [Command::CameraStart, Command::PoseStart, Command::MonitorStart] {
            c.apply(cmd).unwrap();
        }
        let s = c.apply(Command::CameraStop).unwrap().state;
        assert!(!(s.camera_on || s.pose_on || s.monitor_on));
    }

    #[test]
    fn record_off_when_off_is_noop_and_on_needs_live() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = controller(dir.path());
        assert!(!c.apply(Command::Record(false)).unwrap().changed);
        assert!(matches!(
            c.apply(Command::Record(true)),
            Err(ApiError::InvalidTransition { .. })
        ));
    }

    #[test]
    fn five_second_recording_window() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = controller(dir.path());
        c.apply(Command::RunStart).unwrap();
        for _ in 0..13 {
            c.tick(0.05);
        }
        c.apply(Command::Record(true)).unwrap();
        for _ in 0..100 {
            c.tick(0.05);
        }
        let ack = c.apply(Command::Record(false)).unwrap();
        let path = PathBuf::from(ack.detail.unwrap());
        let rec = recording::load(&path).unwrap();
        assert!((99..=101).contains(&rec.samples.len()), "{}", rec.samples.len());
        assert_eq!(rec.samples[0].t, 0.0);
        assert_eq!(ack.state.last_recording, Some(path));
    }

    #[test]
    fn replay_open_defaults_to_latest_and_blocks_live() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = controller(dir.path());
        assert!(matches!(
            c.apply(Command::ReplayOpen(None)),
            Err(ApiError::SessionNotFound(_))
        ));
        c.apply(Command::RunStart).unwrap();
        c.apply(Command::Record(true)).unwrap();
        for _ in 0..20 {
            c.tick(0.05);
        }
        let path = PathBuf::from(c.apply(Command::RunStop).unwrap().detail.unwrap());
        let ack = c.apply(Command::ReplayOpen(None)).unwrap();
        assert_eq!(ack.state.active_session_path, Some(path));
        assert_eq!(ack.state.mode, Mode::Replaying);
        assert!(matches!(
            c.apply(Command::FsmStart),
            Err(ApiError::InvalidTransition { mode: Mode::Replaying, .. })
        ));
        assert!(matches!(
            c.apply(Command::Record(true)),
            Err(ApiError::InvalidTransition { .. })
        ));
        assert!(matches!(
            c.apply(Command::RunStart),
            Err(ApiError::InvalidTransition { .. })
        ));
    }

    #[test]
    fn flag_change_precedes_its_frame() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = controller(dir.path());
        for cmd in [
            Command::RunStart,
            Command::CameraStart,
            Command::PoseStart,
            Command::MonitorStart,
        ] {
            c.apply(cmd).unwrap();
        }
        c.drain_events();
        let mut events = vec![];
        for _ in 0..60 {
            c.tick(0.05);
            events.extend(c.drain_events());
        }
        let rise = events
            .iter()
            .position(|e| matches!(e, TelemetryEvent::FlagChanged { flag: true, .. }))
            .expect("wrist enters the zone within 3 s");
        let TelemetryEvent::FlagChanged { t, .. } = events[rise] else { unreachable!() };
        match &events[rise + 1] {
            TelemetryEvent::Frame { frame, .. } => {
                assert_eq!(frame.t, t);
                assert_eq!(frame.flag, Some(true));
            }
            other => panic!("expected the frame, got {other:?}"),
        }
    }

    #[test]
    fn monitor_off_hides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = controller(dir.path());
        for cmd in [Command::RunStart, Command::CameraStart, Command::PoseStart] {
            c.apply(cmd).unwrap();
        }
        c.drain_events();
        for _ in 0..60 {
            c.tick(0.05);
        }
        let events = c.drain_events();
        assert!(events.iter().all(|e| !matches!(e, TelemetryEvent::FlagChanged { .. })));
        let with_wrist = events
            .iter()
            .filter_map(|e| match e {
                TelemetryEvent::Frame { frame, .. } => Some(frame),
                _ => None,
            })
            .inspect(|f| assert_eq!(f.flag, None))
            .filter(|f| f.wrist_px.is_some())
            .count();
        assert!(with_wrist > 50);
    }
}
