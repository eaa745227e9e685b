//! Serial-chain forward kinematics for revolute joints.

use std::collections::HashSet;

use nalgebra::Vector3;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::geometry::{BasePoint, RigidTransform};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("joint state has {got} angles but the chain has {expected} joints")]
    LengthMismatch { expected: usize, got: usize },
    #[error("chain must have at least one joint")]
    EmptyChain,
    #[error("duplicate joint name `{0}`")]
    DuplicateJoint(String),
    #[error("joint `{name}`: {reason}")]
    InvalidJoint { name: String, reason: String },
}

/// A revolute joint. `origin` is the fixed transform from the parent link
/// frame to this joint's frame; the joint then rotates about `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJoint", into = "RawJoint")]
pub struct JointSpec {
    name: String,
    axis: Vector3<f64>,
    origin: RigidTransform,
    limits: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoint {
    name: String,
    axis: [f64; 3],
    origin: RigidTransform,
    limits_rad: [f64; 2],
}

impl TryFrom<RawJoint> for JointSpec {
    type Error = KinematicsError;

    fn try_from(r: RawJoint) -> Result<Self, Self::Error> {
        JointSpec::new(r.name, r.axis, r.origin, r.limits_rad)
    }
}

impl From<JointSpec> for RawJoint {
    fn from(j: JointSpec) -> Self {
        RawJoint {
            name: j.name,
            axis: [j.axis.x, j.axis.y, j.axis.z],
            origin: j.origin,
            limits_rad: j.limits,
        }
    }
}

impl JointSpec {
    pub fn new(
        name: impl Into<String>,
        axis: [f64; 3],
        origin: RigidTransform,
        limits: [f64; 2],
    ) -> Result<Self, KinematicsError> {
        let name = name.into();
        let invalid = |reason: String| KinematicsError::InvalidJoint {
            name: name.clone(),
            reason,
        };
        let axis = Vector3::from_column_slice(&axis);
        if !axis.iter().all(|v| v.is_finite()) || (axis.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("axis must be a unit vector, norm = {}", axis.norm())));
        }
        if !(limits[0] < limits[1]) {
            return Err(invalid(format!("limits {:?} are not an increasing pair", limits)));
        }
        Ok(Self {
            name,
            axis,
            origin,
            limits,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn axis(&self) -> &Vector3<f64> {
        &self.axis
    }

    pub fn origin(&self) -> &RigidTransform {
        &self.origin
    }

    pub fn limits(&self) -> [f64; 2] {
        self.limits
    }

    pub fn within_limits(&self, angle: f64) -> bool {
        angle >= self.limits[0] && angle <= self.limits[1]
    }

    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.limits[0], self.limits[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChain", into = "RawChain")]
pub struct KinematicChain {
    base_name: String,
    joints: Vec<JointSpec>,
    tool_offset: RigidTransform,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    base_name: String,
    joints: Vec<JointSpec>,
    tool_offset: RigidTransform,
}

impl TryFrom<RawChain> for KinematicChain {
    type Error = KinematicsError;

    fn try_from(r: RawChain) -> Result<Self, Self::Error> {
        KinematicChain::new(r.base_name, r.joints, r.tool_offset)
    }
}

impl From<KinematicChain> for RawChain {
    fn from(c: KinematicChain) -> Self {
        RawChain {
            base_name: c.base_name,
            joints: c.joints,
            tool_offset: c.tool_offset,
        }
    }
}

impl KinematicChain {
    pub fn new(
        base_name: impl Into<String>,
        joints: Vec<JointSpec>,
        tool_offset: RigidTransform,
    ) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::EmptyChain);
        }
        let mut seen = HashSet::new();
        for j in &joints {
            if !seen.insert(j.name.as_str()) {
                return Err(KinematicsError::DuplicateJoint(j.name.clone()));
            }
        }
        Ok(Self {
            base_name: base_name.into(),
            joints,
            tool_offset,
        })
    }

    /// The reference arm: six revolute joints stacked along +z with 0.3 m
    /// links, axes z-y-y-z-y-z, and a 0.1 m tool flange.
    pub fn reference_arm() -> Self {
        const AXES: [[f64; 3]; 6] = [
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let joints = AXES
            .iter()
            .enumerate()
            .map(|(i, axis)| {
                JointSpec::new(
                    format!("joint_{}", i + 1),
                    *axis,
                    RigidTransform::from_translation(0.0, 0.0, 0.3),
                    [-std::f64::consts::PI, std::f64::consts::PI],
                )
                .expect("reference joint is valid")
            })
            .collect();
        Self::new("base_link", joints, RigidTransform::from_translation(0.0, 0.0, 0.1))
            .expect("reference chain is valid")
    }

    pub fn base_name(&self) -> &str {
        &self.base_name
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn tool_offset(&self) -> &RigidTransform {
        &self.tool_offset
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Sum of the fixed translation lengths, an upper bound on reach.
    pub fn total_length(&self) -> f64 {
        self.joints
            .iter()
            .map(|j| j.origin.translation().norm())
            .sum::<f64>()
            + self.tool_offset.translation().norm()
    }

    /// Indices of joints whose angle lies outside its limits.
    pub fn limit_violations(&self, q: &[f64]) -> Vec<usize> {
        self.joints
            .iter()
            .zip(q)
            .enumerate()
            .filter(|(_, (j, a))| !j.within_limits(**a))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn clamp_to_limits(&self, q: &[f64]) -> Vec<f64> {
        self.joints.iter().zip(q).map(|(j, a)| j.clamp(*a)).collect()
    }

    fn check_len(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.joints.len() {
            return Err(KinematicsError::LengthMismatch {
                expected: self.joints.len(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Base-frame pose of every joint frame followed by the tool frame.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Vec<RigidTransform>, KinematicsError> {
        self.check_len(q)?;
        let mut poses = Vec::with_capacity(self.joints.len() + 1);
        let mut acc = RigidTransform::identity();
        for (joint, angle) in self.joints.iter().zip(q) {
            acc = acc
                .compose(&joint.origin)
                .compose(&RigidTransform::from_axis_angle(&joint.axis, *angle));
            poses.push(acc);
        }
        poses.push(acc.compose(&self.tool_offset));
        Ok(poses)
    }

    pub fn tool_position(&self, q: &[f64]) -> Result<BasePoint, KinematicsError> {
        let poses = self.forward_kinematics(q)?;
        Ok(poses.last().expect("tool frame is always present").position())
    }
}

/// Accepts either an inline chain or the name of a built-in one
/// (`reference_arm`).
pub(crate) fn chain_inline_or_named<'de, D: Deserializer<'de>>(
    d: D,
) -> Result<KinematicChain, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum ChainRef {
        Named(String),
        Inline(KinematicChain),
    }
    match ChainRef::deserialize(d)? {
        ChainRef::Inline(c) => Ok(c),
        ChainRef::Named(name) if name == "reference_arm" => Ok(KinematicChain::reference_arm()),
        ChainRef::Named(name) => Err(serde::de::Error::custom(format!("unknown chain `{name}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn planar(links: &[f64]) -> KinematicChain {
        let joints = links
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let origin = if i == 0 {
                    RigidTransform::identity()
                } else {
                    RigidTransform::from_translation(links[i - 1], 0.0, 0.0)
                };
                JointSpec::new(format!("j{i}"), [0.0, 0.0, 1.0], origin, [-4.0, 4.0]).unwrap()
            })
            .collect();
        let last = *links.last().unwrap();
        KinematicChain::new("base", joints, RigidTransform::from_translation(last, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn quarter_turn_of_unit_link() {
        let chain = planar(&[1.0]);
        let p = chain.tool_position(&[FRAC_PI_2]).unwrap();
        assert!(p.distance(&BasePoint::new(0.0, 1.0, 0.0)) < 1e-12);
    }

    #[test]
    fn two_link_planar_closed_form() {
        let chain = planar(&[1.0, 1.0]);
        let (q1, q2) = (FRAC_PI_4, FRAC_PI_4);
        let expected = BasePoint::new(q1.cos() + (q1 + q2).cos(), q1.sin() + (q1 + q2).sin(), 0.0);
        let p = chain.tool_position(&[q1, q2]).unwrap();
        assert!(p.distance(&expected) < 1e-12);
        assert!((p.x - 0.7071).abs() < 1e-4 && (p.y - 1.7071).abs() < 1e-4);
    }

    #[test]
    fn zero_configuration_is_product_of_origins() {
        let chain = KinematicChain::reference_arm();
        let poses = chain.forward_kinematics(&[0.0; 6]).unwrap();
        assert_eq!(poses.len(), 7);
        for (i, pose) in poses.iter().take(6).enumerate() {
            let expected = BasePoint::new(0.0, 0.0, 0.3 * (i + 1) as f64);
            assert!(pose.position().distance(&expected) < 1e-12);
        }
        assert!(poses[6].position().distance(&BasePoint::new(0.0, 0.0, 1.9)) < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let chain = KinematicChain::reference_arm();
        assert_eq!(
            chain.forward_kinematics(&[0.0; 3]),
            Err(KinematicsError::LengthMismatch { expected: 6, got: 3 })
        );
        assert!(chain.tool_position(&[]).is_err());
    }

    #[test]
    fn chain_validation() {
        let j = |n: &str| {
            JointSpec::new(n, [0.0, 0.0, 1.0], RigidTransform::identity(), [-1.0, 1.0]).unwrap()
        };
        assert_eq!(
            KinematicChain::new("b", vec![], RigidTransform::identity()),
            Err(KinematicsError::EmptyChain)
        );
        assert!(matches!(
            KinematicChain::new("b", vec![j("a"), j("a")], RigidTransform::identity()),
            Err(KinematicsError::DuplicateJoint(_))
        ));
        assert!(JointSpec::new("x", [0.0, 0.0, 2.0], RigidTransform::identity(), [-1.0, 1.0]).is_err());
        assert!(JointSpec::new("x", [0.0, 0.0, 1.0], RigidTransform::identity(), [1.0, 1.0]).is_err());
    }

    #[test]
    fn limits_are_reported_and_clamped() {
        let chain = planar(&[1.0, 1.0]);
        assert_eq!(chain.limit_violations(&[0.0, 5.0]), vec![1]);
        assert_eq!(chain.clamp_to_limits(&[-9.0, 5.0]), vec![-4.0, 4.0]);
    }

    fn arb_q() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.1..3.1f64, 6)
    }

    proptest! {
        #[test]
        fn consecutive_frames_are_rigid(q in arb_q()) {
            let chain = KinematicChain::reference_arm();
            let poses = chain.forward_kinematics(&q).unwrap();
            let mut prev = RigidTransform::identity();
            for (i, pose) in poses.iter().enumerate() {
                let rel = prev.inverse().compose(pose);
                let fixed = if i < chain.dof() {
                    chain.joints()[i].origin().translation().norm()
                } else {
                    chain.tool_offset().translation().norm()
                };
                prop_assert!((rel.translation().norm() - fixed).abs() < 1e-9);
                prev = *pose;
            }
        }

        #[test]
        fn tool_position_is_lipschitz(q in arb_q(), d in prop::collection::vec(-1e-3..1e-3f64, 6)) {
            let chain = KinematicChain::reference_arm();
            let q2: Vec<f64> = q.iter().zip(&d).map(|(a, b)| a + b).collect();
            // each joint moves the tool by at most its lever arm (< L) times |δ_k|
            let step: f64 = d.iter().map(|v| v.abs()).sum();
            let moved = chain.tool_position(&q).unwrap().distance(&chain.tool_position(&q2).unwrap());
            prop_assert!(moved <= chain.total_length() * step + 1e-12);
        }

        #[test]
        fn zero_configuration_ignores_axes(axes in prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 3)) {
            prop_assume!(axes.iter().all(|a| Vector3::from_column_slice(a).norm() > 1e-2));
            let joints: Vec<_> = axes.iter().enumerate().map(|(i, a)| {
                let v = Vector3::from_column_slice(a).normalize();
                JointSpec::new(format!("j{i}"), [v.x, v.y, v.z],
                    RigidTransform::from_translation(0.1, 0.2, 0.3), [-1.0, 1.0]).unwrap()
            }).collect();
            let chain = KinematicChain::new("b", joints, RigidTransform::identity()).unwrap();
            let p = chain.tool_position(&[0.0; 3]).unwrap();
            prop_assert!(p.distance(&BasePoint::new(0.3, 0.6, 0.9)) < 1e-12);
        }
    }
}
