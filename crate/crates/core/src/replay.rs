//! Playback of recorded sessions.
//!
//! Three layers, from small to large:
//!
//! * [`joint_frame`] turns one sample's joint angles into link poses,
//! * [`hand_frame`] back-projects one sample's wrist detection,
//! * [`scene_frame`] combines both and re-runs the safety monitor so the
//!   recorded flag can be checked against a recomputed one.
//!
//! [`ReplaySession`] drives `scene_frame` from an injected wall clock with
//! play/pause, seek and speed control.

use serde::Serialize;
use thiserror::Error;
use tracing::warn;

use crate::geometry::{BasePoint, RigidTransform};
use crate::kinematics::KinematicsError;
use crate::monitor::{MonitorError, MonitorState, SafetyMonitor};
use crate::recording::SessionRecording;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("sample index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("replay expected sample {expected} next but got {got}; seek first")]
    NonSequentialReplay { expected: usize, got: usize },
    #[error("playback speed must be positive and finite, got {0}")]
    InvalidSpeed(f64),
    #[error("seek target must be a non-negative time, got {0}")]
    InvalidSeek(f64),
    #[error("wall-clock step must be non-negative, got {0}")]
    InvalidWallStep(f64),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// One rendered instant of a session, live or replayed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneFrame {
    pub index: usize,
    pub t: f64,
    pub link_poses: Vec<RigidTransform>,
    pub wrist_base: Option<BasePoint>,
    pub recorded_flag: bool,
    pub recomputed_flag: bool,
    /// `recorded_flag == recomputed_flag`.
    pub consistency: bool,
    /// Set for the first frames after a seek, while the recomputed flag may
    /// still lack history.
    pub warming_up: bool,
}

fn check_index(rec: &SessionRecording, i: usize) -> Result<(), ReplayError> {
    if i >= rec.samples.len() {
        return Err(ReplayError::IndexOutOfRange {
            index: i,
            len: rec.samples.len(),
        });
    }
    Ok(())
}

/// Link poses for sample `i`. Angles outside the joint limits are clamped.
pub fn joint_frame(rec: &SessionRecording, i: usize) -> Result<Vec<RigidTransform>, ReplayError> {
    check_index(rec, i)?;
    let chain = &rec.meta.chain;
    let q = &rec.samples[i].joints_rad;
    if !chain.limit_violations(q).is_empty() {
        warn!(sample = i, "joint angles outside limits, clamping for display");
        return Ok(chain.forward_kinematics(&chain.clamp_to_limits(q))?);
    }
    Ok(chain.forward_kinematics(q)?)
}

/// Base-frame wrist position for sample `i`, or `None` when the detection is
/// absent, below the confidence threshold, or cannot be back-projected.
pub fn hand_frame(rec: &SessionRecording, i: usize) -> Result<Option<BasePoint>, ReplayError> {
    check_index(rec, i)?;
    Ok(rec.meta.safety_monitor().resolve(&rec.samples[i].observation()))
}

/// Flag recomputation state carried between [`scene_frame`] calls.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMonitor {
    pub state: MonitorState,
    pub next_index: usize,
    pub warmup_left: u32,
}

impl ReplayMonitor {
    pub fn start() -> Self {
        Self {
            state: MonitorState::default(),
            next_index: 0,
            warmup_left: 0,
        }
    }

    /// Recompute restarted at `index`. No warm-up is needed at index 0,
    /// where the history is complete.
    pub fn after_seek(index: usize, warmup: u32) -> Self {
        Self {
            state: MonitorState::default(),
            next_index: index,
            warmup_left: if index == 0 { 0 } else { warmup },
        }
    }
}

pub fn scene_frame(
    rec: &SessionRecording,
    i: usize,
    recompute: &ReplayMonitor,
) -> Result<(SceneFrame, ReplayMonitor), ReplayError> {
    check_index(rec, i)?;
    if i != recompute.next_index {
        return Err(ReplayError::NonSequentialReplay {
            expected: recompute.next_index,
            got: i,
        });
    }
    let sample = &rec.samples[i];
    let monitor = rec.meta.safety_monitor();
    let outcome = monitor.step(&recompute.state, &sample.observation())?;
    let frame = SceneFrame {
        index: i,
        t: sample.t,
        link_poses: joint_frame(rec, i)?,
        wrist_base: outcome.resolution.point(),
        recorded_flag: sample.safety_flag,
        recomputed_flag: outcome.state.flag,
        consistency: sample.safety_flag == outcome.state.flag,
        warming_up: recompute.warmup_left > 0,
    };
    let next = ReplayMonitor {
        state: outcome.state,
        next_index: i + 1,
        warmup_left: recompute.warmup_left.saturating_sub(1),
    };
    Ok((frame, next))
}

/// Slack for comparing the accumulated clock against sample timestamps.
const CLOCK_EPS: f64 = 1e-9;

/// Cursor over a recording, paced by an injected wall clock.
#[derive(Debug, Clone)]
pub struct ReplaySession {
    recording: SessionRecording,
    monitor: SafetyMonitor,
    current: Option<usize>,
    next: usize,
    speed: f64,
    playing: bool,
    logical_origin: f64,
    wall_elapsed: f64,
    recompute: ReplayMonitor,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub cursor: Option<usize>,
    pub sample_count: usize,
    pub duration: f64,
    pub logical_t: f64,
    pub speed: f64,
    pub playing: bool,
    pub finished: bool,
}

impl ReplaySession {
    /// Positioned before the first sample, paused, at speed 1.
    pub fn new(recording: SessionRecording) -> Self {
        let monitor = recording.meta.safety_monitor();
        Self {
            recording,
            monitor,
            current: None,
            next: 0,
            speed: 1.0,
            playing: false,
            logical_origin: 0.0,
            wall_elapsed: 0.0,
            recompute: ReplayMonitor::start(),
        }
    }

    pub fn recording(&self) -> &SessionRecording {
        &self.recording
    }

    /// Index of the most recently emitted sample.
    pub fn cursor(&self) -> Option<usize> {
        self.current
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn is_playing(&self) -> bool {
        self.playing
    }

    /// All samples have been emitted.
    pub fn is_finished(&self) -> bool {
        self.next >= self.recording.samples.len()
    }

    /// Session time at which the last sample's frame period ends.
    pub fn end_time(&self) -> f64 {
        self.recording.duration() + self.recording.meta.nominal_period()
    }

    /// Session time reached by playback.
    pub fn logical_t(&self) -> f64 {
        self.logical_origin + self.wall_elapsed * self.speed
    }

    /// Wall seconds accumulated since the last seek or speed change.
    pub fn wall_elapsed(&self) -> f64 {
        self.wall_elapsed
    }

    pub fn summary(&self) -> ReplaySummary {
        ReplaySummary {
            cursor: self.current,
            sample_count: self.recording.samples.len(),
            duration: self.recording.duration(),
            logical_t: self.logical_t(),
            speed: self.speed,
            playing: self.playing,
            finished: self.is_finished(),
        }
    }

    pub fn play(&mut self) {
        self.playing = !self.is_finished();
    }

    pub fn pause(&mut self) {
        self.playing = false;
    }

    pub fn set_speed(&mut self, speed: f64) -> Result<(), ReplayError> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(ReplayError::InvalidSpeed(speed));
        }
        self.rebase_clock(self.logical_t());
        self.speed = speed;
        Ok(())
    }

    fn rebase_clock(&mut self, logical: f64) {
        self.logical_origin = logical;
        self.wall_elapsed = 0.0;
    }

    /// Moves to the last sample at or before `t` (the last sample if `t` is
    /// past the end) and returns its frame. Flag recomputation restarts from
    /// that sample with a warm-up window.
    pub fn seek(&mut self, t: f64) -> Result<Option<SceneFrame>, ReplayError> {
        if !(t >= 0.0) {
            return Err(ReplayError::InvalidSeek(t));
        }
        let Some(i) = self.recording.index_at_or_before(t) else {
            return Ok(None);
        };
        let warmup = self.monitor.tuning.exit_debounce_frames;
        let (frame, recompute) =
            scene_frame(&self.recording, i, &ReplayMonitor::after_seek(i, warmup))?;
        self.recompute = recompute;
        self.current = Some(i);
        self.next = i + 1;
        self.rebase_clock(self.recording.samples[i].t);
        if self.is_finished() {
            self.playing = false;
        }
        Ok(Some(frame))
    }

    /// Advances the logical clock by `wall_dt * speed` and returns every
    /// sample whose timestamp was passed, in order. Playback stops once the
    /// clock passes the end of the last sample's frame period. Does nothing
    /// while paused.
    pub fn tick(&mut self, wall_dt: f64) -> Result<Vec<SceneFrame>, ReplayError> {
        if !(wall_dt >= 0.0) || !wall_dt.is_finite() {
            return Err(ReplayError::InvalidWallStep(wall_dt));
        }
        let mut frames = Vec::new();
        if !self.playing {
            return Ok(frames);
        }
        self.wall_elapsed += wall_dt;
        let horizon = self.logical_t() - CLOCK_EPS;
        while self.next < self.recording.samples.len() && self.recording.samples[self.next].t < horizon {
            let (frame, recompute) = scene_frame(&self.recording, self.next, &self.recompute)?;
            self.recompute = recompute;
            self.current = Some(self.next);
            self.next += 1;
            frames.push(frame);
        }
        if self.is_finished() && horizon >= self.end_time() {
            self.playing = false;
        }
        Ok(frames)
    }
}
