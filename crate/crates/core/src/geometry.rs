//! Pinhole camera model and rigid transforms between the camera frame and the
//! robot base frame.
//!
//! Extrinsics are always stored as *base-from-camera*: applying a
//! [`RigidTransform`] to a camera-frame point yields the same point in the
//! robot base frame. The camera-from-base direction is derived with
//! [`RigidTransform::inverse`] when needed and never stored.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rotations whose orthonormality residual exceeds this are rejected.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

const PARALLEL_EPS: f64 = 1e-12;
const BEHIND_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("back-projected ray is parallel to the plane")]
    RayParallelToPlane,
    #[error("ray/plane intersection lies behind the camera")]
    IntersectionBehindCamera,
    #[error("point lies behind the camera (camera-frame z = {0})")]
    PointBehindCamera(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal (residual {residual:e})")]
    NonOrthonormalRotation { residual: f64 },
    #[error("rotation is a reflection (det = {0})")]
    ImproperRotation(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A detection in image coordinates. Sub-pixel values are kept as is and the
/// point may lie outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

impl From<[f64; 2]> for PixelPoint {
    fn from([u, v]: [f64; 2]) -> Self {
        Self { u, v }
    }
}

impl From<PixelPoint> for [f64; 2] {
    fn from(p: PixelPoint) -> Self {
        [p.u, p.v]
    }
}

/// A point in the robot base frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct BasePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BasePoint {
    pub const ORIGIN: BasePoint = BasePoint::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &BasePoint) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

impl From<[f64; 3]> for BasePoint {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Self { x, y, z }
    }
}

impl From<BasePoint> for [f64; 3] {
    fn from(p: BasePoint) -> Self {
        [p.x, p.y, p.z]
    }
}

/// Horizontal plane `z = z0` in the base frame, used when no depth is available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablePlane {
    #[serde(rename = "z0_m")]
    pub z0: f64,
}

impl TablePlane {
    pub const fn new(z0: f64) -> Self {
        Self { z0 }
    }
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics", into = "RawIntrinsics")]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: f64,
    height: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: f64,
    height: f64,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = GeometryError;

    fn try_from(r: RawIntrinsics) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<CameraIntrinsics> for RawIntrinsics {
    fn from(c: CameraIntrinsics) -> Self {
        RawIntrinsics {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        if ![fx, fy, cx, cy, width, height].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("camera intrinsics"));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(0.0..width).contains(&cx) || !(0.0..height).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> f64 {
        self.width
    }
    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn principal_point(&self) -> PixelPoint {
        PixelPoint::new(self.cx, self.cy)
    }

    /// Direction of the viewing ray through `px`, in the camera frame, scaled
    /// so that its z component is 1.
    pub fn ray(&self, px: PixelPoint) -> Vector3<f64> {
        Vector3::new((px.u - self.cx) / self.fx, (px.v - self.cy) / self.fy, 1.0)
    }
}

/// Proper rigid motion. As an extrinsic it maps camera-frame points into the
/// robot base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct RigidTransform {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

/// File representation: row-major rotation and a translation in meters.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransform {
    rotation_rowmajor: [f64; 9],
    translation_m: [f64; 3],
}

impl TryFrom<RawTransform> for RigidTransform {
    type Error = GeometryError;

    fn try_from(r: RawTransform) -> Result<Self, Self::Error> {
        RigidTransform::from_rowmajor(r.rotation_rowmajor, r.translation_m)
    }
}

impl From<RigidTransform> for RawTransform {
    fn from(t: RigidTransform) -> Self {
        RawTransform {
            rotation_rowmajor: t.rotation_rowmajor(),
            translation_m: t.translation_array(),
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation of `angle` radians about `axis` (normalized here), no translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self {
            rotation: Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Validates an arbitrary 3×3 matrix as a rotation.
    ///
    /// Matrices within [`ORTHONORMAL_TOLERANCE`] of orthonormal are accepted;
    /// anything not already orthonormal to 1e-9 is projected back onto SO(3).
    pub fn from_matrix(m: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        let residual = orthonormality_residual(&m);
        if residual > ORTHONORMAL_TOLERANCE {
            return Err(GeometryError::NonOrthonormalRotation { residual });
        }
        let det = m.determinant();
        if det < 0.0 {
            return Err(GeometryError::ImproperRotation(det));
        }
        let rotation = if residual <= 1e-9 && (det - 1.0).abs() <= 1e-9 {
            Rotation3::from_matrix_unchecked(m)
        } else {
            Rotation3::from_matrix_eps(&m, 1e-15, 100, Rotation3::identity())
        };
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_rowmajor(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self, GeometryError> {
        Self::from_matrix(
            Matrix3::from_row_slice(&rotation),
            Vector3::from_column_slice(&translation),
        )
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_rowmajor(&self) -> [f64; 9] {
        let m = self.rotation.matrix();
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn position(&self) -> BasePoint {
        BasePoint::from_vector(&self.translation)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: BasePoint) -> BasePoint {
        BasePoint::from_vector(&self.apply(&p.to_vector()))
    }

    /// `self.compose(other)` maps `p` to `self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.inverse();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest element-wise deviation from `other`, across rotation and
    /// translation.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation.matrix() - other.rotation.matrix()).amax();
        let t = (self.translation - other.translation).amax();
        r.max(t)
    }
}

/// `max |RᵀR − I|` element-wise.
pub fn orthonormality_residual(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

/// Back-projects `px` at optical-axis depth `depth` and maps it into the base frame.
pub fn back_project_depth(
    px: PixelPoint,
    depth: f64,
    cam: &CameraIntrinsics,
    ext: &RigidTransform,
) -> Result<BasePoint, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    if !px.is_finite() || !depth.is_finite() {
        return Err(GeometryError::NonFinite("pixel or depth"));
    }
    let p_cam = cam.ray(px) * depth;
    Ok(BasePoint::from_vector(&ext.apply(&p_cam)))
}

/// Intersects the viewing ray through `px` with the horizontal plane.
pub fn back_project_plane(
    px: PixelPoint,
    plane: TablePlane,
    cam: &CameraIntrinsics,
    ext: &RigidTransform,
) -> Result<BasePoint, GeometryError> {
    if !px.is_finite() {
        return Err(GeometryError::NonFinite("pixel"));
    }
    let origin = ext.translation();
    let dir = ext.rotation() * cam.ray(px);
    if dir.z.abs() < PARALLEL_EPS {
        return Err(GeometryError::RayParallelToPlane);
    }
    let s = (plane.z0 - origin.z) / dir.z;
    if s <= 0.0 {
        return Err(GeometryError::IntersectionBehindCamera);
    }
    let hit = origin + dir * s;
    // snap onto the plane; the parametric form can be off by an ulp or two
    Ok(BasePoint::new(hit.x, hit.y, plane.z0))
}

/// Camera-frame coordinates of a base-frame point.
pub fn to_camera_frame(p: BasePoint, ext: &RigidTransform) -> Vector3<f64> {
    ext.rotation().inverse() * (p.to_vector() - ext.translation())
}

/// Depth of `p` along the optical axis (camera-frame z).
pub fn camera_depth(p: BasePoint, ext: &RigidTransform) -> f64 {
    to_camera_frame(p, ext).z
}

pub fn project(
    p: BasePoint,
    cam: &CameraIntrinsics,
    ext: &RigidTransform,
) -> Result<PixelPoint, GeometryError> {
    let pc = to_camera_frame(p, ext);
    if pc.z <= BEHIND_EPS {
        return Err(GeometryError::PointBehindCamera(pc.z));
    }
    Ok(PixelPoint::new(
        cam.fx * pc.x / pc.z + cam.cx,
        cam.fy * pc.y / pc.z + cam.cy,
    ))
}
