//! Geometry and feature primitives shared across the crate.
//!
//! Conventions: pixel origin at the top-left corner with `u` growing right and
//! `v` growing down. Camera frames are x right, y down, z forward. Stereo pairs
//! are assumed rectified, so disparity is purely horizontal.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth below which a point is considered to be on or behind the image plane.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("disparity {0} is not positive")]
    NonPositiveDisparity(f64),
    #[error("rotation is not orthonormal with unit determinant (orthogonality error {ortho:.3e}, det {det})")]
    InvalidRotation { ortho: f64, det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("descriptor has zero norm")]
    ZeroDescriptor,
    #[error("descriptor norm {0} is not 1 within 1e-6")]
    DescriptorNotNormalized(f64),
    #[error("invalid camera parameters: {0}")]
    InvalidCamera(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
}

/// A detected keypoint: pixel position, detection confidence and an
/// L2-normalized descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub c: f64,
    descriptor: Vec<f64>,
}

impl Keypoint {
    /// Builds a keypoint, normalizing `descriptor` to unit length.
    pub fn new(u: f64, v: f64, c: f64, mut descriptor: Vec<f64>) -> Result<Self, GeometryError> {
        check_position(u, v, c)?;
        if descriptor.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("descriptor"));
        }
        let norm = descriptor.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GeometryError::ZeroDescriptor);
        }
        descriptor.iter_mut().for_each(|x| *x /= norm);
        Ok(Self { u, v, c, descriptor })
    }

    /// Builds a keypoint from an already-normalized descriptor without
    /// touching its bits. Used by deserialization.
    pub fn from_normalized(u: f64, v: f64, c: f64, descriptor: Vec<f64>) -> Result<Self, GeometryError> {
        check_position(u, v, c)?;
        if descriptor.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("descriptor"));
        }
        let norm = descriptor.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(GeometryError::DescriptorNotNormalized(norm));
        }
        Ok(Self { u, v, c, descriptor })
    }

    pub fn descriptor(&self) -> &[f64] {
        &self.descriptor
    }

    pub fn dim(&self) -> usize {
        self.descriptor.len()
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    /// Same keypoint moved to a new pixel position.
    pub fn with_position(&self, u: f64, v: f64) -> Self {
        Self { u, v, ..self.clone() }
    }
}

fn check_position(u: f64, v: f64, c: f64) -> Result<(), GeometryError> {
    if !u.is_finite() || !v.is_finite() {
        return Err(GeometryError::NonFinite("keypoint position"));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(GeometryError::InvalidConfidence(c));
    }
    Ok(())
}

/// A 2D line segment with the indices of the L-points sampled along it.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSegment {
    pub id: u32,
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    pub lpoint_indices: Vec<usize>,
}

impl LineSegment {
    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Calibrated, rectified stereo rig. Intrinsics are shared by both cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraRig {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let rig = Self { fx, fy, cx, cy, baseline, width, height };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if ![self.fx, self.fy, self.cx, self.cy, self.baseline].iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite("camera"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 || self.baseline <= 0.0 {
            return Err(GeometryError::InvalidCamera("fx, fy and baseline must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidCamera("image size must be positive".into()));
        }
        Ok(())
    }

    /// 640x480 rig with a 0.5 m baseline, the default for synthetic runs.
    pub fn default_vga() -> Self {
        Self { fx: 400.0, fy: 400.0, cx: 320.0, cy: 240.0, baseline: 0.5, width: 640, height: 480 }
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Pinhole projection of a point already expressed in the camera frame.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth(p.z));
        }
        Ok(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Back-projects pixel `(u, v)` at depth `z` into the camera frame.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Result<Vector3<f64>, GeometryError> {
        if z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth(z));
        }
        Ok(Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z))
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation { ortho, det });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Pose from a rotation vector (axis times angle, radians) and translation.
    pub fn from_axis_angle(rotvec: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self { rotation: Rotation3::new(rotvec).into_inner(), translation: t }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self { rotation: q.to_rotation_matrix().into_inner(), translation: t }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Left-multiplicative tangent update `exp(ξ) ∘ self` with
    /// `ξ = [ω; v]` (rotation vector, then translation).
    pub fn retract(&self, xi: &[f64; 6]) -> SE3Pose {
        let delta = SE3Pose::from_axis_angle(Vector3::new(xi[0], xi[1], xi[2]), Vector3::new(xi[3], xi[4], xi[5]));
        delta.compose(self)
    }

    /// Rotation angle of the relative rotation, in radians.
    pub fn rotation_angle(&self) -> f64 {
        // atan2 of the quaternion keeps full precision near zero, unlike
        // acos of the trace.
        let q = self.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }
}

pub fn se3_compose(a: &SE3Pose, b: &SE3Pose) -> SE3Pose {
    a.compose(b)
}

/// Projects a world point through `pose` (world → camera) into pixels.
pub fn project(camera: &CameraRig, pose: &SE3Pose, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    camera.project_camera_point(&pose.transform_point(point))
}

/// Left-camera 3D point from a rectified disparity: `Z = fx·B/d`.
pub fn triangulate_from_disparity(camera: &CameraRig, u: f64, v: f64, disparity: f64) -> Result<Vector3<f64>, GeometryError> {
    if disparity <= MIN_DEPTH || !disparity.is_finite() {
        return Err(GeometryError::NonPositiveDisparity(disparity));
    }
    let z = camera.fx * camera.baseline / disparity;
    camera.backproject(u, v, z)
}

/// Disparity that a point at depth `z` produces on this rig.
pub fn disparity_from_depth(camera: &CameraRig, z: f64) -> Result<f64, GeometryError> {
    if z <= MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(camera.fx * camera.baseline / z)
}

/// Per-feature stereo cue: metric depth or raw disparity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthCue {
    Depth(f64),
    Disparity(f64),
}

impl DepthCue {
    pub fn is_valid(&self) -> bool {
        match *self {
            DepthCue::Depth(z) | DepthCue::Disparity(z) => z.is_finite() && z > 0.0,
        }
    }

    /// Lifts pixel `(u, v)` to the left camera frame.
    pub fn lift(&self, camera: &CameraRig, u: f64, v: f64) -> Result<Vector3<f64>, GeometryError> {
        match *self {
            DepthCue::Depth(z) => camera.backproject(u, v, z),
            DepthCue::Disparity(d) => triangulate_from_disparity(camera, u, v, d),
        }
    }
}

/// Optional ground-truth labels: the world landmark each feature observes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LandmarkLabels {
    pub ppoints: Vec<u64>,
    pub lpoints: Vec<u64>,
    pub lines: Vec<u64>,
}

/// Optional per-feature stereo cues. `None` entries mark features whose
/// depth could not be measured.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureDepths {
    pub ppoints: Vec<Option<DepthCue>>,
    pub lpoints: Vec<Option<DepthCue>>,
}

/// Everything extracted from one (left) image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
    pub ppoints: Vec<Keypoint>,
    pub lines: Vec<LineSegment>,
    pub lpoints: Vec<Keypoint>,
    pub depth: Option<FeatureDepths>,
    pub labels: Option<LandmarkLabels>,
}

impl FrameFeatures {
    pub fn empty(frame_id: u64, width: u32, height: u32) -> Self {
        Self { frame_id, width, height, ppoints: vec![], lines: vec![], lpoints: vec![], depth: None, labels: None }
    }

    /// Descriptor dimension, if any feature is present.
    pub fn descriptor_dim(&self) -> Option<usize> {
        self.ppoints.first().or_else(|| self.lpoints.first()).map(Keypoint::dim)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidFrame(msg));
        if let Some(d) = self.descriptor_dim() {
            if self.ppoints.iter().chain(&self.lpoints).any(|k| k.dim() != d) {
                return bad("descriptor dimension is not uniform".into());
            }
        }
        let mut ids = std::collections::HashSet::new();
        for line in &self.lines {
            if line.a == line.b {
                return bad(format!("line {} has coincident endpoints", line.id));
            }
            if !ids.insert(line.id) {
                return bad(format!("duplicate line id {}", line.id));
            }
            if let Some(&i) = line.lpoint_indices.iter().find(|&&i| i >= self.lpoints.len()) {
                return bad(format!("line {} references L-point {i} of {}", line.id, self.lpoints.len()));
            }
        }
        if let Some(depth) = &self.depth {
            if depth.ppoints.len() != self.ppoints.len() || depth.lpoints.len() != self.lpoints.len() {
                return bad("depth count does not match feature count".into());
            }
            if depth.ppoints.iter().chain(&depth.lpoints).flatten().any(|d| !d.is_valid()) {
                return bad("depth entries must be positive".into());
            }
        }
        if let Some(labels) = &self.labels {
            if labels.ppoints.len() != self.ppoints.len()
                || labels.lpoints.len() != self.lpoints.len()
                || labels.lines.len() != self.lines.len()
            {
                return bad("label count does not match feature count".into());
            }
        }
        Ok(())
    }

    /// Index of the line owning each L-point (first owner if shared).
    pub fn lpoint_owner(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.lpoints.len()];
        for (li, line) in self.lines.iter().enumerate() {
            for &q in &line.lpoint_indices {
                owner[q].get_or_insert(li);
            }
        }
        owner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> SE3Pose {
        let w = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        SE3Pose::from_axis_angle(w, t)
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_pose(&mut rng);
        assert_eq!(SE3Pose::identity().compose(&t), t);
        let id = t.compose(&t.inverse());
        assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation().norm() < 1e-12);
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let expected = a.to_homogeneous() * b.to_homogeneous();
            let got = se3_compose(&a, &b).to_homogeneous();
            assert!((expected - got).abs().max() < 1e-12);
        }
    }

    #[test]
    fn compose_is_associative_and_preserves_se3() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!((l.to_homogeneous() - r.to_homogeneous()).abs().max() < 1e-12);
            assert!(SE3Pose::new(*l.rotation(), *l.translation()).is_ok());
            let inv = l.inverse();
            assert!(SE3Pose::new(*inv.rotation(), *inv.translation()).is_ok());
        }
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(matches!(SE3Pose::new(m, Vector3::zeros()), Err(GeometryError::InvalidRotation { .. })));
    }

    #[test]
    fn project_examples() {
        let unit = CameraRig::new(1.0, 1.0, 0.0, 0.0, 1.0, 10, 10).unwrap();
        let px = project(&unit, &SE3Pose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
        let cam = CameraRig::new(100.0, 100.0, 50.0, 50.0, 1.0, 200, 200).unwrap();
        let px = project(&cam, &SE3Pose::identity(), &Vector3::new(1.0, 1.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(100.0, 100.0));
        assert!(matches!(
            project(&cam, &SE3Pose::identity(), &Vector3::new(1.0, 1.0, 0.0)),
            Err(GeometryError::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn project_matches_scalar_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cam = CameraRig::new(420.0, 410.0, 318.0, 242.0, 0.3, 640, 480).unwrap();
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let p = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let r = pose.rotation();
            let t = pose.translation();
            let x = r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z + t.x;
            let y = r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z + t.y;
            let z = r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z + t.z;
            match project(&cam, &pose, &p) {
                Ok(px) => {
                    assert!((px.x - (420.0 * x / z + 318.0)).abs() < 1e-9);
                    assert!((px.y - (410.0 * y / z + 242.0)).abs() < 1e-9);
                }
                Err(_) => assert!(z <= MIN_DEPTH),
            }
        }
    }

    #[test]
    fn triangulation_examples() {
        let unit = CameraRig::new(1.0, 1.0, 0.0, 0.0, 1.0, 10, 10).unwrap();
        assert_eq!(triangulate_from_disparity(&unit, 0.0, 0.0, 1.0).unwrap(), Vector3::new(0.0, 0.0, 1.0));
        let cam = CameraRig::new(500.0, 500.0, 0.0, 0.0, 0.5, 10, 10).unwrap();
        assert_eq!(triangulate_from_disparity(&cam, 0.0, 0.0, 5.0).unwrap(), Vector3::new(0.0, 0.0, 50.0));
        assert!(matches!(
            triangulate_from_disparity(&cam, 0.0, 0.0, 0.0),
            Err(GeometryError::NonPositiveDisparity(_))
        ));
    }

    #[test]
    fn keypoint_normalizes_and_validates() {
        let k = Keypoint::new(1.0, 2.0, 0.5, vec![3.0, 4.0]).unwrap();
        assert_eq!(k.descriptor(), &[0.6, 0.8]);
        assert!(Keypoint::new(1.0, 2.0, 1.5, vec![1.0]).is_err());
        assert!(Keypoint::new(f64::NAN, 2.0, 0.5, vec![1.0]).is_err());
        assert!(Keypoint::new(1.0, 2.0, 0.5, vec![0.0, 0.0]).is_err());
        assert!(Keypoint::from_normalized(1.0, 2.0, 0.5, vec![3.0, 4.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn triangulate_project_round_trip(u in 0.0..640.0f64, v in 0.0..480.0f64, d in 0.05..200.0f64) {
            let cam = CameraRig::default_vga();
            let p = triangulate_from_disparity(&cam, u, v, d).unwrap();
            let px = project(&cam, &SE3Pose::identity(), &p).unwrap();
            proptest::prop_assert!((px.x - u).abs() < 1e-9 && (px.y - v).abs() < 1e-9);
        }
    }
}
