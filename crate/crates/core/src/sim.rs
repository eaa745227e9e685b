//! Deterministic stand-in for the physical cell: a cyclic task FSM drives the
//! arm, a scripted wrist path is observed through the camera model with
//! seeded noise, and [`LiveLoop`] composes both with the safety monitor into
//! the live frame stream.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;
use tracing::warn;

use crate::config::{SceneConfig, TaskPlan, WristScript};
use crate::geometry::{camera_depth, project, BasePoint};
use crate::monitor::{
    FlagEvent, MonitorState, SafetyMonitor, SafetyPeriod, WristObservation, WristTrack,
};
use crate::recording::{
    FrameSample, RecordingError, SessionMeta, SessionRecording, SessionWriter,
};
use crate::replay::SceneFrame;

/// How far ahead the live loop extrapolates the wrist.
pub const PREDICTION_HORIZON_S: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FsmState {
    Idle,
    Running { segment: usize, elapsed: f64 },
    Stopped { segment: usize, elapsed: f64 },
}

/// Cyclic waypoint task with linear joint-space interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFsm {
    plan: TaskPlan,
    state: FsmState,
}

impl TaskFsm {
    /// `plan` must already be validated against the chain.
    pub fn new(plan: TaskPlan) -> Self {
        Self {
            plan,
            state: FsmState::Idle,
        }
    }

    pub fn state(&self) -> FsmState {
        self.state
    }

    pub fn is_running(&self) -> bool {
        matches!(self.state, FsmState::Running { .. })
    }

    /// Idle starts at the first waypoint; Stopped resumes where it halted.
    pub fn start(&mut self) {
        self.state = match self.state {
            FsmState::Idle => FsmState::Running {
                segment: 0,
                elapsed: 0.0,
            },
            FsmState::Stopped { segment, elapsed } => FsmState::Running { segment, elapsed },
            running => running,
        };
    }

    pub fn stop(&mut self) {
        if let FsmState::Running { segment, elapsed } = self.state {
            self.state = FsmState::Stopped { segment, elapsed };
        }
    }

    pub fn joints(&self) -> Vec<f64> {
        match self.state {
            FsmState::Idle => self.plan.waypoints[0].joints_rad.clone(),
            FsmState::Running { segment, elapsed } | FsmState::Stopped { segment, elapsed } => {
                let n = self.plan.waypoints.len();
                let from = &self.plan.waypoints[segment].joints_rad;
                let to = &self.plan.waypoints[(segment + 1) % n].joints_rad;
                let s = (elapsed / self.plan.durations_s[segment]).clamp(0.0, 1.0);
                from.iter().zip(to).map(|(a, b)| a + (b - a) * s).collect()
            }
        }
    }

    /// Advances a running task by `dt` seconds and returns the new joint state.
    pub fn step(&mut self, dt: f64) -> Vec<f64> {
        if let FsmState::Running { segment, elapsed } = &mut self.state {
            *elapsed += dt.max(0.0);
            while *elapsed >= self.plan.durations_s[*segment] {
                *elapsed -= self.plan.durations_s[*segment];
                *segment = (*segment + 1) % self.plan.durations_s.len();
            }
        }
        self.joints()
    }
}

/// Synthesizes a wrist detection at time `t`: the scripted position projected
/// into the image with Gaussian pixel and depth noise, dropped with
/// probability `dropout_prob`. Every call consumes the same number of draws.
pub fn wrist_observe<R: Rng + ?Sized>(
    script: &WristScript,
    t: f64,
    cfg: &SceneConfig,
    rng: &mut R,
) -> WristObservation {
    let dropout: f64 = rng.random();
    let du: f64 = rng.sample(StandardNormal);
    let dv: f64 = rng.sample(StandardNormal);
    let dd: f64 = rng.sample(StandardNormal);
    let confidence = rng.random_range(0.7..=1.0);

    if dropout < cfg.noise.dropout_prob {
        return WristObservation::missing(t);
    }
    let p = script.position_at(t);
    let Ok(mut px) = project(p, &cfg.camera, &cfg.extrinsic) else {
        return WristObservation::missing(t);
    };
    px.u += du * cfg.noise.px_sigma;
    px.v += dv * cfg.noise.px_sigma;
    let depth = camera_depth(p, &cfg.extrinsic) + dd * cfg.noise.depth_sigma;
    WristObservation::detected(t, px, (depth > 0.0).then_some(depth), confidence)
}

/// Which parts of the perception pipeline are running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PipelineStages {
    pub camera: bool,
    pub pose: bool,
    pub monitor: bool,
}

impl PipelineStages {
    pub const ALL: PipelineStages = PipelineStages {
        camera: true,
        pose: true,
        monitor: true,
    };
}

/// Everything produced by one tick of the live loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveTick {
    pub tick: u64,
    pub sample: FrameSample,
    pub scene: SceneFrame,
    pub event: FlagEvent,
    pub period: Option<SafetyPeriod>,
    /// Whether the monitor stage is on; flags are only surfaced when it is.
    pub monitor_active: bool,
    pub predicted_wrist: Option<BasePoint>,
}

/// The live 20 Hz pipeline. Time is the tick count divided by the rate, so a
/// run is fully determined by the config, the seed and the command sequence.
#[derive(Debug, Clone)]
pub struct LiveLoop {
    cfg: SceneConfig,
    fsm: TaskFsm,
    monitor: SafetyMonitor,
    state: MonitorState,
    track: WristTrack,
    rng: ChaCha8Rng,
    stages: PipelineStages,
    tick: u64,
}

impl LiveLoop {
    pub fn new(cfg: SceneConfig) -> Self {
        Self {
            fsm: TaskFsm::new(cfg.task.clone()),
            monitor: cfg.safety_monitor(),
            state: MonitorState::default(),
            track: WristTrack::new(8),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            stages: PipelineStages::default(),
            tick: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn fsm(&self) -> &TaskFsm {
        &self.fsm
    }

    pub fn fsm_mut(&mut self) -> &mut TaskFsm {
        &mut self.fsm
    }

    pub fn stages(&self) -> PipelineStages {
        self.stages
    }

    pub fn set_stages(&mut self, stages: PipelineStages) {
        self.stages = stages;
    }

    pub fn monitor_state(&self) -> &MonitorState {
        &self.state
    }

    /// Ticks produced so far.
    pub fn ticks(&self) -> u64 {
        self.tick
    }

    /// Timestamp of the next tick.
    pub fn next_t(&self) -> f64 {
        self.tick as f64 / self.cfg.rate_hz
    }

    pub fn tick(&mut self) -> LiveTick {
        let index = self.tick;
        let t = self.next_t();
        let joints = self.fsm.joints();
        self.fsm.step(self.cfg.frame_period());

        let obs = if self.stages.camera && self.stages.pose {
            wrist_observe(&self.cfg.wrist_script, t, &self.cfg, &mut self.rng)
        } else {
            WristObservation::missing(t)
        };
        let outcome = self
            .monitor
            .step(&self.state, &obs)
            .expect("loop timestamps strictly increase");
        self.state = outcome.state;

        let wrist_base = outcome.resolution.point();
        let predicted_wrist = match wrist_base {
            Some(p) => {
                self.track.push(t, p).expect("loop timestamps strictly increase");
                self.track.predict(PREDICTION_HORIZON_S).ok()
            }
            None => {
                self.track.clear();
                None
            }
        };

        let chain = &self.cfg.chain;
        let link_poses = chain
            .forward_kinematics(&chain.clamp_to_limits(&joints))
            .expect("waypoints match the chain");
        let flag = outcome.state.flag;
        let sample = FrameSample {
            t,
            joints_rad: joints,
            wrist_px: obs.px,
            wrist_depth_m: obs.depth,
            wrist_conf: if obs.px.is_some() { obs.confidence } else { 0.0 },
            safety_flag: flag,
        };
        self.tick += 1;
        LiveTick {
            tick: index,
            scene: SceneFrame {
                index: index as usize,
                t,
                link_poses,
                wrist_base,
                recorded_flag: flag,
                recomputed_flag: flag,
                consistency: true,
                warming_up: false,
            },
            sample,
            event: outcome.event,
            period: outcome.period,
            monitor_active: self.stages.monitor,
            predicted_wrist,
        }
    }
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error(transparent)]
    Recording(#[from] RecordingError),
    #[error("sink failed: {0}")]
    Other(String),
}

/// A consumer of live ticks.
pub trait FrameSink {
    fn accept(&mut self, tick: &LiveTick) -> Result<(), SinkError>;
}

/// Writes live ticks to a session file, re-basing time so the first recorded
/// frame is at t = 0.
#[derive(Debug)]
pub struct RecorderSink {
    writer: SessionWriter,
    rate_hz: f64,
    first_tick: Option<u64>,
}

impl RecorderSink {
    pub fn create(path: impl AsRef<std::path::Path>, meta: &SessionMeta) -> Result<Self, RecordingError> {
        Ok(Self {
            writer: SessionWriter::create(path, meta)?,
            rate_hz: meta.rate_hz,
            first_tick: None,
        })
    }

    pub fn path(&self) -> &std::path::Path {
        self.writer.path()
    }

    pub fn len(&self) -> u64 {
        self.writer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.writer.is_empty()
    }

    pub fn finish(self) -> Result<(std::path::PathBuf, u64), RecordingError> {
        self.writer.finalize()
    }
}

impl FrameSink for RecorderSink {
    fn accept(&mut self, tick: &LiveTick) -> Result<(), SinkError> {
        let first = *self.first_tick.get_or_insert(tick.tick);
        let mut sample = tick.sample.clone();
        sample.t = (tick.tick - first) as f64 / self.rate_hz;
        self.writer.append(&sample)?;
        Ok(())
    }
}

impl<F: FnMut(&LiveTick) -> Result<(), SinkError>> FrameSink for F {
    fn accept(&mut self, tick: &LiveTick) -> Result<(), SinkError> {
        self(tick)
    }
}

/// Per-tick timing of a run.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub tick_compute: Vec<Duration>,
    pub sink_failures: usize,
    /// Ticks whose compute time exceeded the frame period.
    pub overruns: usize,
}

impl RunStats {
    pub fn mean(&self) -> Duration {
        if self.tick_compute.is_empty() {
            return Duration::ZERO;
        }
        self.tick_compute.iter().sum::<Duration>() / self.tick_compute.len() as u32
    }

    /// Nearest-rank percentile, `p` in `[0, 100]`.
    pub fn percentile(&self, p: f64) -> Duration {
        if self.tick_compute.is_empty() {
            return Duration::ZERO;
        }
        let mut sorted = self.tick_compute.clone();
        sorted.sort();
        let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
        sorted[rank.clamp(1, sorted.len()) - 1]
    }
}

/// Runs `ticks` iterations back to back on the simulated clock, feeding every
/// tick to each sink. Sink failures are logged and counted; the loop goes on.
pub fn run_simulated(
    live: &mut LiveLoop,
    sinks: &mut [&mut dyn FrameSink],
    ticks: u64,
) -> RunStats {
    let period = Duration::from_secs_f64(live.config().frame_period());
    let mut stats = RunStats {
        tick_compute: Vec::with_capacity(ticks as usize),
        ..RunStats::default()
    };
    for _ in 0..ticks {
        let started = Instant::now();
        let tick = live.tick();
        for sink in sinks.iter_mut() {
            if let Err(e) = sink.accept(&tick) {
                warn!(tick = tick.tick, error = %e, "sink failure");
                stats.sink_failures += 1;
            }
        }
        let spent = started.elapsed();
        if spent > period {
            warn!(tick = tick.tick, ?spent, "clock stall: tick overran the frame period");
            stats.overruns += 1;
        }
        stats.tick_compute.push(spent);
    }
    stats
}

/// Runs the default pipeline (task started, every stage on) for `ticks`
/// frames and collects the result in memory.
pub fn simulate_session(cfg: &SceneConfig, ticks: u64, created_unix: i64) -> SessionRecording {
    let mut live = LiveLoop::new(cfg.clone());
    live.set_stages(PipelineStages::ALL);
    live.fsm_mut().start();
    let mut meta = cfg.session_meta(created_unix);
    meta.sample_count = Some(ticks);
    let samples = (0..ticks).map(|_| live.tick().sample).collect();
    SessionRecording { meta, samples }
}
