//! Rotations, rigid transforms and the pinhole projection model.
//!
//! Conventions used throughout the workspace:
//! - A [`RigidTransform`] maps points from a source frame into a target
//!   frame: `p_target = R · p_source + t`. `a.compose(&b)` applies `b` first.
//! - Camera frames are x right, y down, z forward.
//! - Euler angles are intrinsic Z-Y-X, labelled (yaw, pitch, roll):
//!   `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("pitch {pitch_rad} rad is at gimbal lock; yaw and roll are not separable")]
    GimbalLock { pitch_rad: f64 },
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("non-finite point at index {0}")]
    NonFinitePoint(usize),
}

/// Rotation as a unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Intrinsic Z-Y-X Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [self.yaw.to_degrees(), self.pitch.to_degrees(), self.roll.to_degrees()]
    }
}

/// Distance from ±π/2 below which pitch is treated as gimbal lock.
pub const GIMBAL_EPS: f64 = 1e-6;

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Normalizes arbitrary components.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::DegenerateQuaternion);
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new_normalize(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Self {
            w: c,
            x: a.x * s,
            y: a.y * s,
            z: a.z * s,
        }
    }

    pub fn from_euler(e: EulerAngles) -> Self {
        let qz = Self::from_axis_angle(Vector3::z(), e.yaw);
        let qy = Self::from_axis_angle(Vector3::y(), e.pitch);
        let qx = Self::from_axis_angle(Vector3::x(), e.roll);
        qz.mul(&qy).mul(&qx)
    }

    /// Fails within [`GIMBAL_EPS`] of pitch = ±π/2.
    pub fn to_euler(&self) -> Result<EulerAngles, GeometryError> {
        let r = self.to_matrix();
        let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
        let pitch = sp.asin();
        if (std::f64::consts::FRAC_PI_2 - pitch.abs()) < GIMBAL_EPS {
            return Err(GeometryError::GimbalLock { pitch_rad: pitch });
        }
        Ok(EulerAngles {
            yaw: r[(1, 0)].atan2(r[(0, 0)]),
            pitch,
            roll: r[(2, 1)].atan2(r[(2, 2)]),
        })
    }

    /// Hamilton product `self ⊗ other` (apply `other`, then `self`).
    pub fn mul(&self, o: &Self) -> Self {
        Self {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// The same rotation with all components negated.
    pub fn negated(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_matrix() * v
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of an orthonormal matrix (Shepperd's method).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            [(m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            [(m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s]
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            [(m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s]
        };
        Self::from_array(q).unwrap_or(Self::IDENTITY)
    }

    /// Rotation angle and unit axis; the axis is arbitrary for identity.
    pub fn to_axis_angle(&self) -> (Vector3<f64>, f64) {
        let q = if self.w < 0.0 { self.negated() } else { *self };
        let s = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if s < 1e-15 {
            return (Vector3::x(), 0.0);
        }
        (Vector3::new(q.x, q.y, q.z) / s, 2.0 * s.atan2(q.w))
    }

    /// Rotation equality modulo the double cover.
    pub fn same_rotation(&self, o: &Self, tol_rad: f64) -> bool {
        angular_distance(self, o) <= tol_rad
    }
}

/// Rotation angle of `a⁻¹·b`, in `[0, π]`.
pub fn angular_distance(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    // atan2 keeps precision near 0 where acos of the dot product does not.
    let d = a.inverse().mul(b);
    2.0 * (d.x * d.x + d.y * d.y + d.z * d.z).sqrt().atan2(d.w.abs())
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::IDENTITY,
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_rotation(rotation: UnitQuaternion) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn from_matrix_parts(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_matrix(r), t)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation.mul(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self {
            rotation: inv,
            translation: -inv.rotate(&self.translation),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_matrix()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.to_array().iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with the given horizontal field of view, square pixels and
    /// the principal point at the image center.
    pub fn from_hfov(width: usize, height: usize, hfov_deg: f64) -> Result<Self, GeometryError> {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidCamera(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("principal point must lie inside the image");
        }
        Ok(())
    }

    /// Same field of view at a different resolution.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let (sx, sy) = (width as f64 / self.width as f64, height as f64 / self.height as f64);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    /// Camera-frame point of pixel `(u, v)` at depth `d`.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * d, (v - self.cy) / self.fy * d, d)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// Points in the vehicle LiDAR frame, meters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::NonFinitePoint(i));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }
}

/// One projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Index of the source point in the cloud.
    pub index: usize,
}

/// Pinhole projection of every point with positive depth that lands inside
/// the image; everything else is dropped.
pub fn project_points(cloud: &PointCloud, extrinsic: &RigidTransform, cam: &CameraModel) -> Vec<Projection> {
    let r = extrinsic.rotation_matrix();
    cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let c = r * p + extrinsic.translation;
            if c.z <= 0.0 {
                return None;
            }
            let u = cam.fx * c.x / c.z + cam.cx;
            let v = cam.fy * c.y / c.z + cam.cy;
            cam.contains(u, v).then_some(Projection { u, v, depth: c.z, index })
        })
        .collect()
}

/// Default far limit used to normalize rendered depth.
pub const DEFAULT_MAX_RANGE: f64 = 80.0;

/// Sparse depth image in row-major order; 0 marks pixels without a return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Rasterizes the projected cloud: nearest pixel, nearest surface wins,
/// depth divided by `max_range` and clipped to 1.
pub fn render_depth_map(cloud: &PointCloud, extrinsic: &RigidTransform, cam: &CameraModel, max_range: f64) -> DepthMap {
    let mut zbuf = vec![f64::INFINITY; cam.width * cam.height];
    for p in project_points(cloud, extrinsic, cam) {
        let (col, row) = (p.u.round(), p.v.round());
        if col >= cam.width as f64 || row >= cam.height as f64 {
            continue;
        }
        let i = row as usize * cam.width + col as usize;
        if p.depth < zbuf[i] {
            zbuf[i] = p.depth;
        }
    }
    DepthMap {
        width: cam.width,
        height: cam.height,
        data: zbuf
            .into_iter()
            .map(|d| if d.is_finite() { (d / max_range).min(1.0) as f32 } else { 0.0 })
            .collect(),
    }
}

/// Rotation-only perturbation with each Euler angle uniform in
/// `(-range_deg, +range_deg)`.
pub fn sample_rotation_perturbation_with<R: Rng + ?Sized>(range_deg: f64, rng: &mut R) -> RigidTransform {
    let mut draw = || {
        if range_deg > 0.0 {
            rng.random_range(-range_deg..range_deg).to_radians()
        } else {
            0.0
        }
    };
    let (yaw, pitch, roll) = (draw(), draw(), draw());
    RigidTransform::from_rotation(UnitQuaternion::from_euler(EulerAngles::new(yaw, pitch, roll)))
}

pub fn sample_rotation_perturbation(range_deg: f64, seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_rotation_perturbation_with(range_deg, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cam_100() -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn on_axis_point_hits_principal_point() {
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 5.0)]).unwrap();
        let p = project_points(&cloud, &RigidTransform::identity(), &cam_100());
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].u, p[0].v, p[0].depth), (50.0, 50.0, 5.0));
    }

    #[test]
    fn off_axis_point_matches_hand_evaluation() {
        let cam = CameraModel::new(100.0, 100.0, 64.0, 32.0, 256, 128).unwrap();
        let cloud = PointCloud::new(vec![Vector3::new(1.0, 2.0, 4.0)]).unwrap();
        let p = project_points(&cloud, &RigidTransform::identity(), &cam);
        assert_eq!((p[0].u, p[0].v, p[0].depth), (89.0, 82.0, 4.0));
    }

    #[test]
    fn points_behind_or_outside_are_dropped() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.0, 0.0, -3.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(100.0, 0.0, 1.0),
        ])
        .unwrap();
        assert!(project_points(&cloud, &RigidTransform::identity(), &cam_100()).is_empty());
        assert!(project_points(&PointCloud::default(), &RigidTransform::identity(), &cam_100()).is_empty());
    }

    #[test]
    fn depth_map_keeps_nearest_surface() {
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 9.0), Vector3::new(0.0, 0.0, 4.0)]).unwrap();
        let m = render_depth_map(&cloud, &RigidTransform::identity(), &cam_100(), 80.0);
        assert_eq!(m.get(50, 50), (4.0f64 / 80.0) as f32);
        assert_eq!(m.nonzero(), 1);
        let empty = render_depth_map(&PointCloud::default(), &RigidTransform::identity(), &cam_100(), 80.0);
        assert!(empty.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depth_map_matches_projection_oracle() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.3, -0.2, 6.0),
            Vector3::new(-1.0, 0.5, 3.0),
            Vector3::new(2.0, 1.0, 12.0),
            Vector3::new(-0.4, -0.9, 2.5),
            Vector3::new(0.1, 0.1, 90.0),
        ])
        .unwrap();
        let ext = RigidTransform::new(
            UnitQuaternion::from_euler(EulerAngles::new(0.05, -0.02, 0.03)),
            Vector3::new(0.1, -0.2, 0.3),
        );
        let cam = cam_100();
        let m = render_depth_map(&cloud, &ext, &cam, 80.0);
        let mut oracle = vec![0.0f32; 100 * 100];
        for p in &cloud.points {
            let c = ext.rotation_matrix() * p + ext.translation;
            let (u, v) = (100.0 * c.x / c.z + 50.0, 100.0 * c.y / c.z + 50.0);
            let (col, row) = (u.round() as usize, v.round() as usize);
            let val = (c.z / 80.0).min(1.0) as f32;
            let slot = &mut oracle[row * 100 + col];
            if *slot == 0.0 || val < *slot {
                *slot = val;
            }
        }
        assert_eq!(m.data, oracle);
        assert!(m.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn angular_distance_reference_values() {
        let q = UnitQuaternion::from_euler(EulerAngles::new(0.3, -0.2, 0.9));
        assert!(angular_distance(&q, &q) < 1e-7);
        let z180 = UnitQuaternion::from_axis_angle(Vector3::z(), PI);
        assert!((angular_distance(&UnitQuaternion::IDENTITY, &z180) - PI).abs() < 1e-12);
        let x10 = UnitQuaternion::from_axis_angle(Vector3::x(), 10f64.to_radians());
        assert!((angular_distance(&UnitQuaternion::IDENTITY, &x10) - 0.174533).abs() < 1e-6);
        assert_eq!(angular_distance(&q, &q.negated()), angular_distance(&q, &q));
    }

    #[test]
    fn euler_reference_values() {
        let q = UnitQuaternion::from_euler(EulerAngles::new(0.0, 0.0, 0.0));
        assert_eq!(q, UnitQuaternion::IDENTITY);
        let yaw90 = UnitQuaternion::from_euler(EulerAngles::new(PI / 2.0, 0.0, 0.0)).to_matrix();
        assert!((yaw90.column(0) - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn gimbal_lock_is_flagged() {
        let q = UnitQuaternion::from_euler(EulerAngles::new(0.2, PI / 2.0, 0.1));
        assert!(matches!(q.to_euler(), Err(GeometryError::GimbalLock { .. })));
    }

    #[test]
    fn perturbation_is_deterministic_and_bounded() {
        let a = sample_rotation_perturbation(10.0, 42);
        let b = sample_rotation_perturbation(10.0, 42);
        assert_eq!(a.rotation.to_array().map(f64::to_bits), b.rotation.to_array().map(f64::to_bits));
        assert_eq!(a.translation, Vector3::zeros());
        for seed in 0..200 {
            let e = sample_rotation_perturbation(20.0, seed).rotation.to_euler().unwrap();
            for ang in e.to_degrees() {
                assert!(ang.abs() <= 20.0 + 1e-9);
            }
        }
        assert_eq!(sample_rotation_perturbation(0.0, 3), RigidTransform::identity());
    }

    #[test]
    fn invalid_cameras_are_rejected() {
        assert!(CameraModel::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraModel::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
        assert!(UnitQuaternion::new_normalize(0.0, 0.0, 0.0, 0.0).is_err());
    }
}
