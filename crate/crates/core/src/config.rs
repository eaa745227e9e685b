//! Scene configuration: the simulated cell, its camera rig, the task and the
//! scripted wrist path.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::geometry::{BasePoint, CameraIntrinsics, RigidTransform, TablePlane};
use crate::kinematics::KinematicChain;
use crate::monitor::{MonitorTuning, SafetyMonitor, SafetyZone};
use crate::recording::{SessionMeta, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scene config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scene config: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("invalid scene config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of the Gaussian pixel noise on each axis.
    pub px_sigma: f64,
    pub depth_sigma: f64,
    pub dropout_prob: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        px_sigma: 0.0,
        depth_sigma: 0.0,
        dropout_prob: 0.0,
    };
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            px_sigma: 2.0,
            depth_sigma: 0.01,
            dropout_prob: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub name: String,
    pub joints_rad: Vec<f64>,
}

/// Cyclic task: segment `i` runs from waypoint `i` to waypoint `i + 1`
/// (wrapping to the first) over `durations_s[i]` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskPlan {
    pub waypoints: Vec<Waypoint>,
    pub durations_s: Vec<f64>,
}

impl TaskPlan {
    pub fn cycle_time(&self) -> f64 {
        self.durations_s.iter().sum()
    }

    pub fn validate(&self, dof: usize) -> Result<(), ConfigError> {
        if self.waypoints.is_empty() {
            return Err(ConfigError::Invalid("task needs at least one waypoint".into()));
        }
        if self.durations_s.len() != self.waypoints.len() {
            return Err(ConfigError::Invalid(format!(
                "{} waypoints need {} segment durations, got {}",
                self.waypoints.len(),
                self.waypoints.len(),
                self.durations_s.len()
            )));
        }
        if let Some(d) = self.durations_s.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(ConfigError::Invalid(format!("segment duration {d} must be positive")));
        }
        for w in &self.waypoints {
            if w.joints_rad.len() != dof {
                return Err(ConfigError::Invalid(format!(
                    "waypoint `{}` has {} angles for a {dof}-joint chain",
                    w.name,
                    w.joints_rad.len()
                )));
            }
            if !w.joints_rad.iter().all(|a| a.is_finite()) {
                return Err(ConfigError::Invalid(format!("waypoint `{}` is not finite", w.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knot {
    pub t: f64,
    #[serde(rename = "p_m")]
    pub p: BasePoint,
}

/// Piecewise-linear wrist path in the base frame, held constant outside the
/// knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WristScript {
    knots: Vec<Knot>,
}

impl WristScript {
    pub fn new(knots: Vec<Knot>) -> Result<Self, ConfigError> {
        if knots.is_empty() {
            return Err(ConfigError::Invalid("wrist script needs at least one knot".into()));
        }
        if !knots.iter().all(|k| k.t.is_finite() && k.p.is_finite()) {
            return Err(ConfigError::Invalid("wrist script has non-finite knots".into()));
        }
        if knots.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(ConfigError::Invalid(
                "wrist script knot times must be strictly increasing".into(),
            ));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn position_at(&self, t: f64) -> BasePoint {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if t <= first.t {
            return first.p;
        }
        if t >= last.t {
            return last.p;
        }
        let i = self.knots.partition_point(|k| k.t <= t);
        let (a, b) = (self.knots[i - 1], self.knots[i]);
        let s = (t - a.t) / (b.t - a.t);
        BasePoint::from_vector(&(a.p.to_vector() + (b.p.to_vector() - a.p.to_vector()) * s))
    }
}

fn default_rate() -> f64 {
    20.0
}

fn script_from_knots<'de, D: Deserializer<'de>>(d: D) -> Result<WristScript, D::Error> {
    WristScript::new(Vec::<Knot>::deserialize(d)?).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    pub rng_seed: u64,
    pub camera: CameraIntrinsics,
    pub extrinsic: RigidTransform,
    pub table: TablePlane,
    pub zone: SafetyZone,
    #[serde(default)]
    pub monitor: MonitorTuning,
    pub noise: NoiseModel,
    #[serde(deserialize_with = "crate::kinematics::chain_inline_or_named")]
    pub chain: KinematicChain,
    pub task: TaskPlan,
    #[serde(deserialize_with = "script_from_knots")]
    pub wrist_script: WristScript,
}

impl SceneConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_yaml(&std::fs::read_to_string(path)?)
    }

    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SceneConfig = serde_yaml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("scene config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(ConfigError::Invalid(format!("rate_hz {} must be positive", self.rate_hz)));
        }
        let n = &self.noise;
        if !(n.px_sigma >= 0.0 && n.px_sigma.is_finite() && n.depth_sigma >= 0.0 && n.depth_sigma.is_finite()) {
            return Err(ConfigError::Invalid("noise sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&n.dropout_prob) {
            return Err(ConfigError::Invalid(format!(
                "dropout_prob {} outside [0, 1]",
                n.dropout_prob
            )));
        }
        if !self.table.z0.is_finite() {
            return Err(ConfigError::Invalid("table height must be finite".into()));
        }
        self.monitor
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.task.validate(self.chain.dof())
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn safety_monitor(&self) -> SafetyMonitor {
        SafetyMonitor {
            zone: self.zone,
            camera: self.camera,
            extrinsic: self.extrinsic,
            table: self.table,
            tuning: self.monitor,
        }
    }

    /// Header for a recording of this scene. The sample count is filled in
    /// by the writer.
    pub fn session_meta(&self, created_unix: i64) -> SessionMeta {
        SessionMeta {
            version: FORMAT_VERSION,
            rate_hz: self.rate_hz,
            created_unix,
            sample_count: None,
            camera: self.camera,
            extrinsic: self.extrinsic,
            table: self.table,
            zone: self.zone,
            monitor: self.monitor,
            chain: self.chain.clone(),
        }
    }
}

impl Default for SceneConfig {
    /// A 640×480 camera 2 m above the table looking straight down at the
    /// shared workspace in front of the reference arm. The wrist reaches into
    /// the workspace once, dwells for two seconds and withdraws.
    fn default() -> Self {
        let waypoint = |name: &str, q: [f64; 6]| Waypoint {
            name: name.into(),
            joints_rad: q.to_vec(),
        };
        Self {
            rate_hz: 20.0,
            rng_seed: 7,
            camera: CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640.0, 480.0)
                .expect("valid default intrinsics"),
            // camera x along base x, camera z pointing down
            extrinsic: RigidTransform::from_rowmajor(
                [1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0],
                [0.5, 0.0, 2.0],
            )
            .expect("valid default extrinsic"),
            table: TablePlane::new(0.0),
            zone: SafetyZone::new(BasePoint::new(0.3, -0.3, 0.0), BasePoint::new(0.7, 0.3, 0.6))
                .expect("valid default zone"),
            monitor: MonitorTuning::default(),
            noise: NoiseModel::default(),
            chain: KinematicChain::reference_arm(),
            task: TaskPlan {
                waypoints: vec![
                    waypoint("home", [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                    waypoint("reach", [0.0, 1.0, 0.8, 0.0, 0.6, 0.0]),
                    waypoint("carry", [0.8, 1.0, 0.8, 0.0, 0.6, 0.0]),
                    waypoint("lift", [0.8, 0.3, 0.4, 0.0, 0.3, 0.0]),
                ],
                durations_s: vec![2.0, 2.0, 2.0, 2.0],
            },
            wrist_script: WristScript::new(vec![
                Knot { t: 0.0, p: BasePoint::new(0.5, 0.8, 0.1) },
                Knot { t: 3.0, p: BasePoint::new(0.5, 0.0, 0.1) },
                Knot { t: 5.0, p: BasePoint::new(0.5, 0.0, 0.1) },
                Knot { t: 8.0, p: BasePoint::new(0.5, 0.8, 0.1) },
            ])
            .expect("valid default script"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = SceneConfig::default();
        cfg.validate().unwrap();
        assert_eq!(SceneConfig::from_yaml(&cfg.to_yaml()).unwrap(), cfg);
    }

    #[test]
    fn shipped_default_scene_matches_builtin() {
        let text = include_str!("../../../config/default-scene.yaml");
        assert_eq!(SceneConfig::from_yaml(text).unwrap(), SceneConfig::default());
    }

    #[test]
    fn script_interpolates_and_clamps() {
        let s = SceneConfig::default().wrist_script;
        assert_eq!(s.position_at(-1.0), BasePoint::new(0.5, 0.8, 0.1));
        assert!(s.position_at(1.5).distance(&BasePoint::new(0.5, 0.4, 0.1)) < 1e-12);
        assert_eq!(s.position_at(4.0), BasePoint::new(0.5, 0.0, 0.1));
        assert_eq!(s.position_at(100.0), BasePoint::new(0.5, 0.8, 0.1));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SceneConfig::default();
        cfg.task.durations_s[1] = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = SceneConfig::default();
        cfg.task.waypoints[0].joints_rad.pop();
        assert!(cfg.validate().is_err());

        let mut cfg = SceneConfig::default();
        cfg.noise.dropout_prob = 1.5;
        assert!(cfg.validate().is_err());

        assert!(WristScript::new(vec![
            Knot { t: 1.0, p: BasePoint::ORIGIN },
            Knot { t: 1.0, p: BasePoint::ORIGIN },
        ])
        .is_err());

        let text = SceneConfig::default().to_yaml().replace("rng_seed", "seed");
        assert!(SceneConfig::from_yaml(&text).is_err());
    }

    #[test]
    fn named_chain_and_default_rate() {
        let text = SceneConfig::default().to_yaml();
        let mut v: serde_yaml::Value = serde_yaml::from_str(&text).unwrap();
        let m = v.as_mapping_mut().unwrap();
        m.insert("chain".into(), "reference_arm".into());
        m.remove("rate_hz");
        let cfg = SceneConfig::from_yaml(&serde_yaml::to_string(&v).unwrap()).unwrap();
        assert_eq!(cfg, SceneConfig::default());
    }
}
