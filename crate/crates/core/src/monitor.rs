//! Safety-zone intrusion tracking.
//!
//! The monitor is a pure transition function over [`MonitorState`]. A wrist
//! observation is resolved to a base-frame point and classified as inside the
//! zone, outside it, or missing. The safety flag
//!
//! * rises on the first inside frame,
//! * falls only after `exit_debounce_frames` consecutive outside frames, and
//! * is forced on after `missing_failsafe_frames` consecutive missing frames.
//!
//! A [`SafetyPeriod`] is emitted when the flag falls. Its exit time is the
//! timestamp of the first frame of the clearing outside streak.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    back_project_depth, back_project_plane, BasePoint, CameraIntrinsics, PixelPoint,
    RigidTransform, TablePlane,
};

pub const EXIT_DEBOUNCE_FRAMES: u32 = 3;
pub const MISSING_FAILSAFE_FRAMES: u32 = 10;
pub const CONFIDENCE_MIN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("timestamp {t} does not advance past previous timestamp {previous}")]
    NonMonotonicTimestamp { previous: f64, t: f64 },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid safety zone: {0}")]
    InvalidZone(String),
    #[error("invalid monitor tuning: {0}")]
    InvalidTuning(String),
    #[error("prediction needs at least two tracked points")]
    InsufficientHistory,
}

/// Closed axis-aligned box in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawZone", into = "RawZone")]
pub struct SafetyZone {
    min: BasePoint,
    max: BasePoint,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawZone {
    min_m: [f64; 3],
    max_m: [f64; 3],
}

impl TryFrom<RawZone> for SafetyZone {
    type Error = MonitorError;

    fn try_from(r: RawZone) -> Result<Self, Self::Error> {
        SafetyZone::new(r.min_m.into(), r.max_m.into())
    }
}

impl From<SafetyZone> for RawZone {
    fn from(z: SafetyZone) -> Self {
        RawZone {
            min_m: z.min.into(),
            max_m: z.max.into(),
        }
    }
}

impl SafetyZone {
    pub fn new(min: BasePoint, max: BasePoint) -> Result<Self, MonitorError> {
        if !min.is_finite() || !max.is_finite() {
            return Err(MonitorError::InvalidZone("non-finite corner".into()));
        }
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(MonitorError::InvalidZone(format!(
                "min corner {:?} must be below max corner {:?} on every axis",
                <[f64; 3]>::from(min),
                <[f64; 3]>::from(max)
            )));
        }
        Ok(Self { min, max })
    }

    pub fn min_corner(&self) -> BasePoint {
        self.min
    }

    pub fn max_corner(&self) -> BasePoint {
        self.max
    }

    pub fn center(&self) -> BasePoint {
        BasePoint::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
            0.5 * (self.min.z + self.max.z),
        )
    }

    /// Boundary points count as inside.
    pub fn contains(&self, p: &BasePoint) -> bool {
        self.min.x <= p.x
            && p.x <= self.max.x
            && self.min.y <= p.y
            && p.y <= self.max.y
            && self.min.z <= p.z
            && p.z <= self.max.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// Use measured depth, falling back to the table plane when depth is absent.
    Depth,
    /// Always intersect with the table plane.
    Plane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTuning", into = "RawTuning")]
pub struct MonitorTuning {
    pub exit_debounce_frames: u32,
    pub missing_failsafe_frames: u32,
    pub confidence_min: f64,
    pub projection_mode: ProjectionMode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTuning {
    exit_debounce_frames: u32,
    missing_failsafe_frames: u32,
    confidence_min: f64,
    projection_mode: ProjectionMode,
}

impl TryFrom<RawTuning> for MonitorTuning {
    type Error = MonitorError;

    fn try_from(r: RawTuning) -> Result<Self, Self::Error> {
        let t = MonitorTuning {
            exit_debounce_frames: r.exit_debounce_frames,
            missing_failsafe_frames: r.missing_failsafe_frames,
            confidence_min: r.confidence_min,
            projection_mode: r.projection_mode,
        };
        t.validate()?;
        Ok(t)
    }
}

impl From<MonitorTuning> for RawTuning {
    fn from(t: MonitorTuning) -> Self {
        RawTuning {
            exit_debounce_frames: t.exit_debounce_frames,
            missing_failsafe_frames: t.missing_failsafe_frames,
            confidence_min: t.confidence_min,
            projection_mode: t.projection_mode,
        }
    }
}

impl Default for MonitorTuning {
    fn default() -> Self {
        Self {
            exit_debounce_frames: EXIT_DEBOUNCE_FRAMES,
            missing_failsafe_frames: MISSING_FAILSAFE_FRAMES,
            confidence_min: CONFIDENCE_MIN,
            projection_mode: ProjectionMode::Depth,
        }
    }
}

impl MonitorTuning {
    pub fn validate(&self) -> Result<(), MonitorError> {
        if self.exit_debounce_frames == 0 || self.missing_failsafe_frames == 0 {
            return Err(MonitorError::InvalidTuning(
                "frame thresholds must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence_min) {
            return Err(MonitorError::InvalidTuning(format!(
                "confidence_min {} outside [0, 1]",
                self.confidence_min
            )));
        }
        Ok(())
    }
}

/// One wrist keypoint detection on the session clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WristObservation {
    pub t: f64,
    pub px: Option<PixelPoint>,
    pub depth: Option<f64>,
    pub confidence: f64,
}

impl WristObservation {
    pub fn missing(t: f64) -> Self {
        Self {
            t,
            px: None,
            depth: None,
            confidence: 0.0,
        }
    }

    pub fn detected(t: f64, px: PixelPoint, depth: Option<f64>, confidence: f64) -> Self {
        Self {
            t,
            px: Some(px),
            depth,
            confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyPeriod {
    pub t_enter: f64,
    pub t_exit: f64,
}

impl SafetyPeriod {
    pub fn duration(&self) -> f64 {
        self.t_exit - self.t_enter
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MonitorState {
    pub flag: bool,
    pub consecutive_outside: u32,
    pub consecutive_missing: u32,
    pub last_point: Option<BasePoint>,
    pub open_period_start: Option<f64>,
    /// Timestamp of the first frame of the current outside streak.
    pub outside_streak_start: Option<f64>,
    pub last_t: Option<f64>,
}

/// What a single observation resolved to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resolution {
    Inside(BasePoint),
    Outside(BasePoint),
    Missing,
}

impl Resolution {
    pub fn point(&self) -> Option<BasePoint> {
        match self {
            Resolution::Inside(p) | Resolution::Outside(p) => Some(*p),
            Resolution::Missing => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlagEvent {
    Unchanged,
    Raised { t: f64, failsafe: bool },
    Cleared { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: MonitorState,
    pub period: Option<SafetyPeriod>,
    pub event: FlagEvent,
    pub resolution: Resolution,
}

/// Zone, camera rig and thresholds needed to step the monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyMonitor {
    pub zone: SafetyZone,
    pub camera: CameraIntrinsics,
    pub extrinsic: RigidTransform,
    pub table: TablePlane,
    pub tuning: MonitorTuning,
}

impl SafetyMonitor {
    /// Back-projects an observation to the base frame. Low-confidence,
    /// absent or geometrically unresolvable detections yield `None`.
    pub fn resolve(&self, obs: &WristObservation) -> Option<BasePoint> {
        let px = obs.px?;
        if !(obs.confidence >= self.tuning.confidence_min) {
            return None;
        }
        let resolved = match (self.tuning.projection_mode, obs.depth) {
            (ProjectionMode::Depth, Some(depth)) => {
                back_project_depth(px, depth, &self.camera, &self.extrinsic)
            }
            _ => back_project_plane(px, self.table, &self.camera, &self.extrinsic),
        };
        resolved.ok()
    }

    pub fn classify(&self, point: Option<BasePoint>) -> Resolution {
        match point {
            Some(p) if self.zone.contains(&p) => Resolution::Inside(p),
            Some(p) => Resolution::Outside(p),
            None => Resolution::Missing,
        }
    }

    pub fn step(
        &self,
        state: &MonitorState,
        obs: &WristObservation,
    ) -> Result<StepOutcome, MonitorError> {
        if !obs.t.is_finite() || obs.t < 0.0 {
            return Err(MonitorError::InvalidObservation(format!(
                "timestamp {} must be finite and non-negative",
                obs.t
            )));
        }
        if obs.px.is_none() && obs.depth.is_some() {
            return Err(MonitorError::InvalidObservation(
                "depth present without a pixel".into(),
            ));
        }
        let resolution = self.classify(self.resolve(obs));
        self.transition(state, obs.t, resolution)
    }

    /// The transition rules applied to an already classified frame.
    pub fn transition(
        &self,
        state: &MonitorState,
        t: f64,
        resolution: Resolution,
    ) -> Result<StepOutcome, MonitorError> {
        if let Some(previous) = state.last_t {
            if !(t > previous) {
                return Err(MonitorError::NonMonotonicTimestamp { previous, t });
            }
        }
        let mut next = *state;
        next.last_t = Some(t);
        let mut event = FlagEvent::Unchanged;
        let mut period = None;

        match resolution {
            Resolution::Inside(p) => {
                next.last_point = Some(p);
                next.consecutive_missing = 0;
                next.consecutive_outside = 0;
                next.outside_streak_start = None;
                if !next.flag {
                    next.flag = true;
                    next.open_period_start = Some(t);
                    event = FlagEvent::Raised { t, failsafe: false };
                }
            }
            Resolution::Outside(p) => {
                next.last_point = Some(p);
                next.consecutive_missing = 0;
                if next.consecutive_outside == 0 {
                    next.outside_streak_start = Some(t);
                }
                next.consecutive_outside = next.consecutive_outside.saturating_add(1);
                if next.flag && next.consecutive_outside >= self.tuning.exit_debounce_frames {
                    let t_enter = next.open_period_start.take().expect("flag implies open period");
                    let t_exit = next.outside_streak_start.expect("streak start is set");
                    next.flag = false;
                    period = Some(SafetyPeriod { t_enter, t_exit });
                    event = FlagEvent::Cleared { t };
                }
            }
            Resolution::Missing => {
                next.consecutive_outside = 0;
                next.outside_streak_start = None;
                next.consecutive_missing = next.consecutive_missing.saturating_add(1);
                if !next.flag && next.consecutive_missing >= self.tuning.missing_failsafe_frames {
                    next.flag = true;
                    next.open_period_start = Some(t);
                    event = FlagEvent::Raised { t, failsafe: true };
                }
            }
        }

        Ok(StepOutcome {
            state: next,
            period,
            event,
            resolution,
        })
    }

    /// Folds [`step`](Self::step) over a session and returns every safety
    /// period. A period still open at the end is closed at the final
    /// timestamp, or one `frame_period` later if it opened on the final frame.
    pub fn segment_periods<I>(
        &self,
        observations: I,
        frame_period: f64,
    ) -> Result<Vec<SafetyPeriod>, MonitorError>
    where
        I: IntoIterator<Item = WristObservation>,
    {
        let mut state = MonitorState::default();
        let mut periods = Vec::new();
        for obs in observations {
            let out = self.step(&state, &obs)?;
            periods.extend(out.period);
            state = out.state;
        }
        periods.extend(close_trailing(&state, frame_period));
        Ok(periods)
    }
}

/// The period left open by `state` at the end of a session, if any.
pub fn close_trailing(state: &MonitorState, frame_period: f64) -> Option<SafetyPeriod> {
    let t_enter = state.open_period_start?;
    let last = state.last_t.unwrap_or(t_enter);
    let t_exit = if last > t_enter {
        last
    } else {
        t_enter + frame_period
    };
    Some(SafetyPeriod { t_enter, t_exit })
}

/// Bounded history of resolved wrist positions.
#[derive(Debug, Clone, PartialEq)]
pub struct WristTrack {
    capacity: usize,
    points: VecDeque<(f64, BasePoint)>,
}

impl WristTrack {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(2);
        Self {
            capacity,
            points: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: f64, p: BasePoint) -> Result<(), MonitorError> {
        if let Some(&(previous, _)) = self.points.back() {
            if !(t > previous) {
                return Err(MonitorError::NonMonotonicTimestamp { previous, t });
            }
        }
        if self.points.len() == self.capacity {
            self.points.pop_front();
        }
        self.points.push_back((t, p));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn clear(&mut self) {
        self.points.clear();
    }

    /// Constant-velocity extrapolation from the two most recent points.
    pub fn predict(&self, horizon: f64) -> Result<BasePoint, MonitorError> {
        let n = self.points.len();
        if n < 2 {
            return Err(MonitorError::InsufficientHistory);
        }
        let (t0, p0) = self.points[n - 2];
        let (t1, p1) = self.points[n - 1];
        let v = (p1.to_vector() - p0.to_vector()) / (t1 - t0);
        Ok(BasePoint::from_vector(&(p1.to_vector() + v * horizon)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_zone() -> SafetyZone {
        SafetyZone::new(BasePoint::new(0.0, 0.0, 0.0), BasePoint::new(1.0, 1.0, 1.0)).unwrap()
    }

    fn monitor() -> SafetyMonitor {
        // camera at the origin looking along +z: pixel (cx, cy) at depth d is (0, 0, d)
        SafetyMonitor {
            zone: SafetyZone::new(BasePoint::new(-0.5, -0.5, 0.5), BasePoint::new(0.5, 0.5, 1.5))
                .unwrap(),
            camera: CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap(),
            extrinsic: RigidTransform::identity(),
            table: TablePlane::new(1.0),
            tuning: MonitorTuning::default(),
        }
    }

    fn inside(t: f64) -> WristObservation {
        WristObservation::detected(t, PixelPoint::new(320.0, 240.0), Some(1.0), 0.9)
    }

    fn outside(t: f64) -> WristObservation {
        WristObservation::detected(t, PixelPoint::new(320.0, 240.0), Some(3.0), 0.9)
    }

    #[test]
    fn contains_examples() {
        let z = unit_zone();
        assert!(z.contains(&BasePoint::new(0.5, 0.5, 0.5)));
        assert!(z.contains(&BasePoint::new(1.0, 0.5, 0.5)));
        assert!(!z.contains(&BasePoint::new(1.0 + 1e-9, 0.5, 0.5)));
    }

    #[test]
    fn zone_rejects_inverted_corners() {
        assert!(SafetyZone::new(BasePoint::new(0.0, 0.0, 0.0), BasePoint::new(1.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn entry_is_immediate() {
        let m = monitor();
        let s0 = MonitorState::default();
        let a = m.step(&s0, &outside(0.0)).unwrap();
        assert!(!a.state.flag);
        let b = m.step(&a.state, &inside(0.05)).unwrap();
        assert!(b.state.flag);
        assert_eq!(b.event, FlagEvent::Raised { t: 0.05, failsafe: false });
        assert_eq!(b.state.open_period_start, Some(0.05));
    }

    #[test]
    fn exit_is_debounced() {
        let m = monitor();
        let mut s = MonitorState::default();
        let frames = [inside(0.0), outside(0.05), outside(0.10), outside(0.15)];
        let mut periods = vec![];
        let mut flags = vec![];
        for f in &frames {
            let out = m.step(&s, f).unwrap();
            periods.extend(out.period);
            flags.push(out.state.flag);
            s = out.state;
        }
        assert_eq!(flags, [true, true, true, false]);
        assert_eq!(periods, [SafetyPeriod { t_enter: 0.0, t_exit: 0.05 }]);
    }

    #[test]
    fn missing_frames_keep_flag_and_trigger_failsafe() {
        let m = monitor();
        let out = m.step(&MonitorState::default(), &inside(0.0)).unwrap();
        let mut s = out.state;
        for k in 1..=10 {
            let out = m.step(&s, &WristObservation::missing(k as f64 * 0.05)).unwrap();
            assert!(out.state.flag);
            s = out.state;
        }

        let mut s = MonitorState::default();
        for k in 0..10 {
            let out = m.step(&s, &WristObservation::missing(k as f64 * 0.05)).unwrap();
            assert_eq!(out.state.flag, k == 9);
            if k == 9 {
                assert_eq!(out.event, FlagEvent::Raised { t: 0.45, failsafe: true });
            }
            s = out.state;
        }
    }

    #[test]
    fn low_confidence_counts_as_missing() {
        let m = monitor();
        let mut obs = inside(0.0);
        obs.confidence = 0.29;
        let out = m.step(&MonitorState::default(), &obs).unwrap();
        assert_eq!(out.resolution, Resolution::Missing);
        assert!(!out.state.flag);
    }

    #[test]
    fn depth_mode_falls_back_to_plane() {
        let m = monitor();
        let obs = WristObservation::detected(0.0, PixelPoint::new(320.0, 240.0), None, 0.9);
        let p = m.resolve(&obs).unwrap();
        assert!(p.distance(&BasePoint::new(0.0, 0.0, 1.0)) < 1e-12);
    }

    #[test]
    fn timestamps_must_increase() {
        let m = monitor();
        let s = m.step(&MonitorState::default(), &inside(0.1)).unwrap().state;
        assert!(matches!(
            m.step(&s, &inside(0.1)),
            Err(MonitorError::NonMonotonicTimestamp { .. })
        ));
        assert!(m.step(&MonitorState::default(), &inside(-1.0)).is_err());
    }

    #[test]
    fn segment_periods_examples() {
        let m = monitor();
        let none = m
            .segment_periods((0..20).map(|k| outside(k as f64 * 0.05)), 0.05)
            .unwrap();
        assert!(none.is_empty());

        let trailing = m
            .segment_periods(
                [outside(0.0), inside(0.05), inside(0.10), outside(0.15)],
                0.05,
            )
            .unwrap();
        assert_eq!(trailing, [SafetyPeriod { t_enter: 0.05, t_exit: 0.15 }]);

        let last_frame = m.segment_periods([outside(0.0), inside(0.05)], 0.05).unwrap();
        assert_eq!(last_frame.len(), 1);
        assert!(last_frame[0].t_exit > last_frame[0].t_enter);
    }

    #[test]
    fn predict_examples() {
        let mut track = WristTrack::new(4);
        assert_eq!(track.predict(0.1), Err(MonitorError::InsufficientHistory));
        track.push(0.0, BasePoint::new(0.0, 0.0, 0.0)).unwrap();
        track.push(0.05, BasePoint::new(0.1, 0.0, 0.0)).unwrap();
        let p = track.predict(0.05).unwrap();
        assert!(p.distance(&BasePoint::new(0.2, 0.0, 0.0)) < 1e-12);

        let mut track = WristTrack::new(2);
        track.push(0.0, BasePoint::new(0.0, 0.0, 0.0)).unwrap();
        track.push(0.1, BasePoint::new(0.0, 0.2, 0.0)).unwrap();
        // v = (0, 2, 0) m/s, 0.2 + 2 * 0.25 = 0.7
        let p = track.predict(0.25).unwrap();
        assert!(p.distance(&BasePoint::new(0.0, 0.7, 0.0)) < 1e-12);

        let mut still = WristTrack::new(3);
        still.push(0.0, BasePoint::new(1.0, 2.0, 3.0)).unwrap();
        still.push(0.1, BasePoint::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(still.predict(10.0).unwrap(), BasePoint::new(1.0, 2.0, 3.0));
        assert!(still.push(0.1, BasePoint::ORIGIN).is_err());
    }

    #[test]
    fn track_evicts_oldest() {
        let mut track = WristTrack::new(2);
        for k in 0..5 {
            track.push(k as f64, BasePoint::new(k as f64, 0.0, 0.0)).unwrap();
        }
        assert_eq!(track.len(), 2);
        assert!(track.predict(1.0).unwrap().distance(&BasePoint::new(5.0, 0.0, 0.0)) < 1e-12);
    }

    #[test]
    fn contains_matches_componentwise_check_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..100_000 {
            let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let ext: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.01..2.0));
            let min = BasePoint::from(a);
            let max = BasePoint::new(a[0] + ext[0], a[1] + ext[1], a[2] + ext[2]);
            let zone = SafetyZone::new(min, max).unwrap();
            let mut p: [f64; 3] = std::array::from_fn(|k| rng.random_range(a[k] - 1.0..a[k] + ext[k] + 1.0));
            if i % 4 == 0 {
                // put the point exactly on a face
                let axis = rng.random_range(0..3);
                p[axis] = if rng.random_bool(0.5) { a[axis] } else { a[axis] + ext[axis] };
            }
            let upper = [max.x, max.y, max.z];
            let brute = (0..3).all(|k| a[k] <= p[k] && p[k] <= upper[k]);
            assert_eq!(zone.contains(&BasePoint::from(p)), brute);
        }
    }

    proptest! {
        #[test]
        fn tuning_round_trips_through_yaml(d in 1u32..10, f in 1u32..30, c in 0.0..1.0f64) {
            let t = MonitorTuning {
                exit_debounce_frames: d,
                missing_failsafe_frames: f,
                confidence_min: c,
                projection_mode: ProjectionMode::Plane,
            };
            let s = serde_yaml::to_string(&t).unwrap();
            prop_assert_eq!(serde_yaml::from_str::<MonitorTuning>(&s).unwrap(), t);
        }
    }
}
