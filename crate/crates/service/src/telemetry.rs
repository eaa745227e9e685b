//! The telemetry stream: event types and the per-subscriber JSON-lines feed.
//!
//! Fan-out is a `tokio::sync::broadcast` channel. Each subscriber has its own
//! bounded view of the ring; a subscriber that falls behind loses the oldest
//! events and receives a [`TelemetryEvent::Warning`] in their place. The
//! producer never waits.

use cobot_safety::geometry::{BasePoint, PixelPoint, RigidTransform};
use cobot_safety::monitor::SafetyPeriod;
use cobot_safety::recording::FrameSample;
use cobot_safety::replay::SceneFrame;
use futures::Stream;
use serde::Serialize;
use tokio::sync::broadcast;

use crate::controller::SystemState;

/// Events buffered per subscriber before the oldest are dropped. At 20 Hz
/// this is several seconds of frames.
pub const TELEMETRY_BUFFER: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Live,
    Replay,
}

/// A scene frame as sent to the console. Flags are `None` while the monitor
/// stage is off.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameView {
    pub index: usize,
    pub t: f64,
    pub joints_rad: Vec<f64>,
    pub link_poses: Vec<RigidTransform>,
    pub wrist_px: Option<PixelPoint>,
    pub wrist_base: Option<BasePoint>,
    pub predicted_wrist: Option<BasePoint>,
    pub flag: Option<bool>,
    /// Replay only: the flag stored in the file.
    pub recorded_flag: Option<bool>,
    /// Replay only: stored and recomputed flags agree.
    pub consistency: Option<bool>,
    pub warming_up: bool,
}

impl FrameView {
    pub fn live(
        scene: &SceneFrame,
        sample: &FrameSample,
        predicted_wrist: Option<BasePoint>,
        monitor_on: bool,
    ) -> Self {
        Self {
            index: scene.index,
            t: scene.t,
            joints_rad: sample.joints_rad.clone(),
            link_poses: scene.link_poses.clone(),
            wrist_px: sample.wrist_px,
            wrist_base: scene.wrist_base,
            predicted_wrist,
            flag: monitor_on.then_some(scene.recomputed_flag),
            recorded_flag: None,
            consistency: None,
            warming_up: false,
        }
    }

    pub fn replay(scene: &SceneFrame, sample: &FrameSample) -> Self {
        Self {
            index: scene.index,
            t: scene.t,
            joints_rad: sample.joints_rad.clone(),
            link_poses: scene.link_poses.clone(),
            wrist_px: sample.wrist_px,
            wrist_base: scene.wrist_base,
            predicted_wrist: None,
            flag: Some(scene.recomputed_flag),
            recorded_flag: Some(scene.recorded_flag),
            consistency: Some(scene.consistency),
            warming_up: scene.warming_up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TelemetryEvent {
    Frame {
        origin: Origin,
        frame: FrameView,
    },
    FlagChanged {
        origin: Origin,
        t: f64,
        flag: bool,
        failsafe: bool,
    },
    PeriodClosed {
        origin: Origin,
        period: SafetyPeriod,
    },
    StateChanged {
        state: SystemState,
    },
    Warning {
        text: String,
    },
}

impl TelemetryEvent {
    pub fn warning(text: impl Into<String>) -> Self {
        TelemetryEvent::Warning { text: text.into() }
    }

    /// One JSON object followed by a newline.
    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("telemetry events serialize");
        line.push('\n');
        line
    }
}

/// Turns a subscription into an event stream that starts with `first` and
/// reports dropped events as warnings. Ends when the producer goes away.
pub fn subscription(
    first: TelemetryEvent,
    rx: broadcast::Receiver<TelemetryEvent>,
) -> impl Stream<Item = TelemetryEvent> {
    let head = futures::stream::iter([first]);
    let tail = futures::stream::unfold(rx, |mut rx| async move {
        let event = match rx.recv().await {
            Ok(event) => event,
            Err(broadcast::error::RecvError::Lagged(n)) => {
                TelemetryEvent::warning(format!("consumer too slow: {n} telemetry events dropped"))
            }
            Err(broadcast::error::RecvError::Closed) => return None,
        };
        Some((event, rx))
    });
    futures::StreamExt::chain(head, tail)
}
