//! Synthetic roadside scenes: a flat road world with box obstacles, a
//! static roadside camera, and an ego vehicle carrying a spinning LiDAR.
//!
//! World frame: z up, the road runs along x. Vehicle LiDAR frame: x
//! forward, y left, z up.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    sample_rotation_perturbation_with, CameraModel, PointCloud, RigidTransform, UnitQuaternion,
};

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("infeasible scene config: {0}")]
    InfeasibleConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub rows: usize,
    pub cols: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range: f64,
    pub min_range: f64,
    /// Mount height above ground.
    pub height: f64,
    /// Standard deviation of Gaussian range noise; 0 disables it.
    pub range_jitter_std: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 180,
            elevation_min_deg: -25.0,
            elevation_max_deg: 15.0,
            max_range: 100.0,
            min_range: 1.0,
            height: 1.8,
            range_jitter_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub boxes: usize,
    /// Number of trajectory poses (frames per sequence).
    pub trajectory_len: usize,
    /// Spacing between consecutive vehicle poses, meters.
    pub frame_spacing: f64,
    pub camera_height: (f64, f64),
    /// Downward tilt of the roadside camera, degrees.
    pub camera_pitch_deg: (f64, f64),
    /// Heading jitter of the camera around the road direction, degrees.
    pub camera_yaw_deg: (f64, f64),
    /// Lateral offset of the camera pole from the road center line.
    pub camera_offset: (f64, f64),
    /// Along-road distance from the camera to the first vehicle pose.
    pub start_distance: (f64, f64),
    /// Largest allowed closest-approach distance between the trajectory
    /// and the camera, horizontally.
    pub max_pass_distance: f64,
    pub road_half_width: f64,
    pub box_extent: (f64, f64),
    pub box_height: (f64, f64),
    /// Along-road region boxes are scattered over.
    pub box_region: (f64, f64),
    pub ground_albedo: f64,
    pub sky_value: f64,
    pub camera_hfov_deg: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub lidar: LidarConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            boxes: 6,
            trajectory_len: 4,
            frame_spacing: 2.5,
            camera_height: (5.0, 7.0),
            camera_pitch_deg: (10.0, 16.0),
            camera_yaw_deg: (-8.0, 8.0),
            camera_offset: (-8.0, -6.0),
            start_distance: (8.0, 70.0),
            max_pass_distance: 90.0,
            road_half_width: 4.0,
            box_extent: (2.0, 6.0),
            box_height: (1.5, 7.0),
            box_region: (8.0, 75.0),
            ground_albedo: 0.35,
            sky_value: 0.9,
            camera_hfov_deg: 90.0,
            image_width: 256,
            image_height: 128,
            lidar: LidarConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn camera(&self) -> Result<CameraModel, SceneError> {
        CameraModel::from_hfov(self.image_width, self.image_height, self.camera_hfov_deg)
            .map_err(|e| SceneError::InfeasibleConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InfeasibleConfig(m));
        if self.trajectory_len == 0 {
            return bad("trajectory length must be at least 1".into());
        }
        if !(self.frame_spacing.is_finite() && self.frame_spacing > 0.0) {
            return bad("frame spacing must be positive".into());
        }
        let ranges = [
            ("camera_height", self.camera_height),
            ("camera_pitch_deg", self.camera_pitch_deg),
            ("camera_yaw_deg", self.camera_yaw_deg),
            ("camera_offset", self.camera_offset),
            ("start_distance", self.start_distance),
            ("box_extent", self.box_extent),
            ("box_height", self.box_height),
            ("box_region", self.box_region),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} range ({lo}, {hi}) is empty"));
            }
        }
        if self.camera_height.0 <= 0.0 {
            return bad("camera must be above the ground plane".into());
        }
        if !(0.0..90.0).contains(&self.camera_pitch_deg.0) || self.camera_pitch_deg.1 >= 90.0 {
            return bad("camera pitch must look down by less than 90 degrees".into());
        }
        let worst_pass = self.start_distance.1.hypot(self.camera_offset.0.abs().max(self.camera_offset.1.abs()) + self.road_half_width);
        if worst_pass > self.max_pass_distance {
            return bad(format!(
                "trajectory may pass {worst_pass:.1} m from the camera, above the {} m limit",
                self.max_pass_distance
            ));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive".into());
        }
        if self.lidar.rows == 0 || self.lidar.cols == 0 || self.lidar.max_range <= self.lidar.min_range {
            return bad("lidar ray grid or range window is empty".into());
        }
        self.camera()?;
        Ok(())
    }
}

/// Axis-aligned box resting on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub albedo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPose {
    pub time: f64,
    /// Vehicle LiDAR frame → world.
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ground_albedo: f64,
    pub sky_value: f64,
    pub boxes: Vec<SceneBox>,
    /// Camera frame → world.
    pub camera_pose: RigidTransform,
    pub trajectory: Vec<TrajectoryPose>,
    /// Distance at which shading has dropped by half.
    pub attenuation_range: f64,
}

/// Closest ray–surface intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub albedo: f64,
    /// Outward surface normal, world frame.
    pub normal: Vector3<f64>,
}

fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, b: &SceneBox) -> Option<(f64, Vector3<f64>)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut normal = Vector3::zeros();
    for axis in 0..3 {
        if dir[axis].abs() < 1e-12 {
            if origin[axis] < b.min[axis] || origin[axis] > b.max[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let (mut t0, mut t1) = ((b.min[axis] - origin[axis]) * inv, (b.max[axis] - origin[axis]) * inv);
        let mut n = Vector3::zeros();
        n[axis] = -dir[axis].signum();
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            normal = n;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > 1e-9).then_some((t_near, normal))
}

impl Scene {
    /// Nearest intersection of the ray `origin + t·dir` (t > 0) with the
    /// ground plane or any box. `dir` need not be normalized; the returned
    /// range is measured in units of `|dir|`.
    pub fn cast_ray(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if dir.z < -1e-12 && origin.z > 0.0 {
            let t = -origin.z / dir.z;
            best = Some(Hit {
                range: t,
                albedo: self.ground_albedo,
                normal: Vector3::z(),
            });
        }
        for b in &self.boxes {
            if let Some((t, n)) = ray_box(origin, dir, b) {
                if best.is_none_or(|h| t < h.range) {
                    best = Some(Hit {
                        range: t,
                        albedo: b.albedo,
                        normal: n,
                    });
                }
            }
        }
        best
    }

    pub fn camera_position(&self) -> Vector3<f64> {
        self.camera_pose.translation
    }

    /// Vehicle LiDAR → camera transform for trajectory pose `i`.
    pub fn lidar_to_camera(&self, i: usize) -> RigidTransform {
        self.camera_pose.inverse().compose(&self.trajectory[i].pose)
    }

    /// Planar distance between vehicle pose `i` and the camera.
    pub fn horizontal_distance(&self, i: usize) -> f64 {
        let d = self.trajectory[i].pose.translation - self.camera_pose.translation;
        d.x.hypot(d.y)
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Camera→world rotation for a camera looking along heading `yaw`
/// (about world z) and tilted down by `pitch`.
pub fn look_rotation(yaw: f64, pitch: f64) -> UnitQuaternion {
    let forward = Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), -pitch.sin());
    let right = Vector3::new(yaw.sin(), -yaw.cos(), 0.0);
    let down = forward.cross(&right);
    UnitQuaternion::from_matrix(&Matrix3::from_columns(&[right, down, forward]))
}

pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene, SceneError> {
    generate_scene_with(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn generate_scene_with(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<Scene, SceneError> {
    cfg.validate()?;
    let cam_pos = Vector3::new(0.0, draw(rng, cfg.camera_offset), draw(rng, cfg.camera_height));
    let cam_yaw = draw(rng, cfg.camera_yaw_deg).to_radians();
    let cam_pitch = draw(rng, cfg.camera_pitch_deg).to_radians();
    let camera_pose = RigidTransform::new(look_rotation(cam_yaw, cam_pitch), cam_pos);

    let lane = if rng.random_bool(0.5) { 0.5 } else { -0.5 } * cfg.road_half_width;
    let heading_forward = rng.random_bool(0.5);
    let start = draw(rng, cfg.start_distance);
    let span = cfg.frame_spacing * (cfg.trajectory_len - 1) as f64;
    // Driving away from the camera starts near it; driving towards it ends near it.
    let (x0, dx, yaw) = if heading_forward {
        (start, cfg.frame_spacing, 0.0)
    } else {
        (start + span, -cfg.frame_spacing, std::f64::consts::PI)
    };
    let vehicle_rot = UnitQuaternion::from_axis_angle(Vector3::z(), yaw);
    let trajectory = (0..cfg.trajectory_len)
        .map(|i| TrajectoryPose {
            time: 0.1 * i as f64,
            pose: RigidTransform::new(vehicle_rot, Vector3::new(x0 + dx * i as f64, lane, cfg.lidar.height)),
        })
        .collect();

    let mut boxes = Vec::with_capacity(cfg.boxes);
    for k in 0..cfg.boxes {
        let sx = draw(rng, cfg.box_extent);
        let sy = draw(rng, cfg.box_extent);
        let h = draw(rng, cfg.box_height);
        let x = draw(rng, cfg.box_region);
        let side = if k % 2 == 0 { 1.0 } else { -1.0 };
        let clearance = cfg.road_half_width + 1.5 + 0.5 * sy;
        let y = side * (clearance + rng.random_range(0.0..6.0));
        boxes.push(SceneBox {
            min: Vector3::new(x - 0.5 * sx, y - 0.5 * sy, 0.0),
            max: Vector3::new(x + 0.5 * sx, y + 0.5 * sy, h),
            albedo: rng.random_range(0.1..0.95),
        });
    }

    Ok(Scene {
        ground_albedo: cfg.ground_albedo,
        sky_value: cfg.sky_value,
        boxes,
        camera_pose,
        trajectory,
        attenuation_range: 120.0,
    })
}

/// Unit ray directions of the LiDAR grid, in the sensor frame.
pub fn lidar_directions(cfg: &LidarConfig) -> Vec<Vector3<f64>> {
    let mut dirs = Vec::with_capacity(cfg.rows * cfg.cols);
    for r in 0..cfg.rows {
        let t = if cfg.rows > 1 { r as f64 / (cfg.rows - 1) as f64 } else { 0.0 };
        let el = (cfg.elevation_min_deg + t * (cfg.elevation_max_deg - cfg.elevation_min_deg)).to_radians();
        for c in 0..cfg.cols {
            let az = 2.0 * std::f64::consts::PI * c as f64 / cfg.cols as f64;
            dirs.push(Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
        }
    }
    dirs
}

/// Casts the LiDAR grid from `vehicle_pose` (LiDAR→world) and returns the
/// returns within range, in the LiDAR frame. Coordinates are rounded to
/// `f32` precision so they survive the on-disk format unchanged.
pub fn simulate_lidar(scene: &Scene, vehicle_pose: &RigidTransform, cfg: &LidarConfig, rng: &mut impl Rng) -> PointCloud {
    let rot = vehicle_pose.rotation_matrix();
    let origin = vehicle_pose.translation;
    let mut points = Vec::new();
    for d in lidar_directions(cfg) {
        let Some(hit) = scene.cast_ray(&origin, &(rot * d)) else {
            continue;
        };
        let mut range = hit.range;
        if cfg.range_jitter_std > 0.0 {
            let z: f64 = rand_distr_normal(rng);
            range += z * cfg.range_jitter_std;
        }
        if range < cfg.min_range || range > cfg.max_range {
            continue;
        }
        let p = d * range;
        points.push(Vector3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64));
    }
    PointCloud { points }
}

fn rand_distr_normal(rng: &mut impl Rng) -> f64 {
    // Box–Muller; avoids a distribution dependency for one optional knob.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Single-channel 8-bit image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }
}

/// Shading of a surface hit: albedo, a per-face factor that separates
/// box faces, and attenuation growing with range.
pub fn shade(scene: &Scene, hit: &Hit) -> f64 {
    let face = if hit.normal.z > 0.5 {
        1.0
    } else if hit.normal.x.abs() > 0.5 {
        0.8
    } else {
        0.6
    };
    let atten = 1.0 / (1.0 + hit.range / scene.attenuation_range);
    (hit.albedo * face * atten).clamp(0.0, 1.0)
}

/// Ray-traced grayscale view. Pixel `(row, col)` samples the ray through
/// image coordinates `(u, v) = (col, row)`.
pub fn simulate_camera(scene: &Scene, cam: &CameraModel, camera_pose: &RigidTransform) -> GrayImage {
    let rot = camera_pose.rotation_matrix();
    let origin = camera_pose.translation;
    let mut data = Vec::with_capacity(cam.width * cam.height);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let d_cam = Vector3::new((col as f64 - cam.cx) / cam.fx, (row as f64 - cam.cy) / cam.fy, 1.0);
            let value = match scene.cast_ray(&origin, &(rot * d_cam)) {
                Some(hit) => shade(scene, &hit),
                None => scene.sky_value,
            };
            data.push((value * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage {
        width: cam.width,
        height: cam.height,
        data,
    }
}

/// One synchronized LiDAR/camera pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub points: PointCloud,
    pub image: GrayImage,
    /// Ground-truth vehicle LiDAR → camera transform.
    pub t_lc: RigidTransform,
    /// Miscalibrated transform `ΔT · T_LC`.
    pub t_init: RigidTransform,
    /// Horizontal vehicle–camera distance, meters.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub camera: CameraModel,
    /// Camera deviation shared by every frame; rotation only.
    pub delta: RigidTransform,
    pub frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn max_distance(&self) -> f64 {
        self.frames.iter().map(|f| f.distance).fold(0.0, f64::max)
    }

    /// Same frames re-perturbed with a new deviation.
    pub fn with_delta(&self, delta: RigidTransform) -> Self {
        let mut out = self.clone();
        out.delta = delta;
        for f in &mut out.frames {
            f.t_init = delta.compose(&f.t_lc);
        }
        out
    }
}

/// Renders every trajectory pose and applies one sampled deviation.
pub fn build_sequence(
    scene: &Scene,
    cam: &CameraModel,
    lidar: &LidarConfig,
    perturb_range_deg: f64,
    rng: &mut impl Rng,
) -> FrameSequence {
    let delta = sample_rotation_perturbation_with(perturb_range_deg, rng);
    let image = |_: usize| simulate_camera(scene, cam, &scene.camera_pose);
    let frames = (0..scene.trajectory.len())
        .map(|i| {
            let t_lc = scene.lidar_to_camera(i);
            Frame {
                points: simulate_lidar(scene, &scene.trajectory[i].pose, lidar, rng),
                image: image(i),
                t_lc,
                t_init: delta.compose(&t_lc),
                distance: scene.horizontal_distance(i),
            }
        })
        .collect();
    FrameSequence {
        camera: *cam,
        delta,
        frames,
    }
}

/// RNG for sequence `index` under `master_seed`: one independent stream
/// per sequence, so generation order does not matter.
pub fn sequence_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Scene plus sequence for one dataset entry.
pub fn generate_sequence(cfg: &SceneConfig, perturb_range_deg: f64, master_seed: u64, index: u64) -> Result<FrameSequence, SceneError> {
    let mut rng = sequence_rng(master_seed, index);
    let scene = generate_scene_with(cfg, &mut rng)?;
    let cam = cfg.camera()?;
    Ok(build_sequence(&scene, &cam, &cfg.lidar, perturb_range_deg, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_points;

    fn empty_scene() -> Scene {
        Scene {
            ground_albedo: 0.35,
            sky_value: 0.9,
            boxes: vec![],
            camera_pose: RigidTransform::new(look_rotation(0.0, 0.2), Vector3::new(0.0, 0.0, 6.0)),
            trajectory: vec![],
            attenuation_range: 120.0,
        }
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(generate_scene(&cfg, 1).unwrap(), generate_scene(&cfg, 1).unwrap());
        assert_ne!(generate_scene(&cfg, 1).unwrap(), generate_scene(&cfg, 2).unwrap());
    }

    #[test]
    fn scene_respects_counts() {
        let cfg = SceneConfig {
            boxes: 0,
            trajectory_len: 4,
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg, 7).unwrap();
        assert!(s.boxes.is_empty());
        assert_eq!(s.trajectory.len(), 4);
        assert!(s.trajectory.windows(2).all(|w| w[1].time > w[0].time));
        assert!(s.camera_pose.translation.z > 0.0);
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let zero = SceneConfig {
            trajectory_len: 0,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&zero, 0), Err(SceneError::InfeasibleConfig(_))));
        let underground = SceneConfig {
            camera_height: (-1.0, 2.0),
            ..SceneConfig::default()
        };
        assert!(generate_scene(&underground, 0).is_err());
    }

    #[test]
    fn camera_looks_toward_trajectory() {
        let cfg = SceneConfig::default();
        for seed in 0..20 {
            let s = generate_scene(&cfg, seed).unwrap();
            let forward = s.camera_pose.rotation_matrix().column(2).into_owned();
            let to_vehicle = (s.trajectory[0].pose.translation - s.camera_position()).normalize();
            assert!(forward.dot(&to_vehicle) > 0.0, "seed {seed}");
        }
    }

    #[test]
    fn downward_ray_hits_ground_at_mount_height() {
        let scene = empty_scene();
        let cfg = LidarConfig {
            rows: 1,
            cols: 1,
            elevation_min_deg: -90.0,
            elevation_max_deg: -90.0,
            min_range: 0.1,
            ..LidarConfig::default()
        };
        let pose = RigidTransform::from_rotation(UnitQuaternion::IDENTITY).compose(&RigidTransform::new(
            UnitQuaternion::IDENTITY,
            Vector3::new(0.0, 0.0, 2.0),
        ));
        let cloud = simulate_lidar(&scene, &pose, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(cloud.len(), 1);
        assert!((cloud.points[0].norm() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rays_into_sky_return_nothing() {
        let scene = empty_scene();
        let cfg = LidarConfig {
            elevation_min_deg: 5.0,
            elevation_max_deg: 30.0,
            rows: 4,
            cols: 36,
            ..LidarConfig::default()
        };
        let pose = RigidTransform::new(UnitQuaternion::IDENTITY, Vector3::new(0.0, 0.0, 1.8));
        assert!(simulate_lidar(&scene, &pose, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    }

    #[test]
    fn box_face_ranges_follow_ray_obliquity() {
        let mut scene = empty_scene();
        scene.boxes.push(SceneBox {
            min: Vector3::new(10.0, -20.0, 0.0),
            max: Vector3::new(14.0, 20.0, 20.0),
            albedo: 0.5,
        });
        let cfg = LidarConfig {
            rows: 5,
            cols: 360,
            elevation_min_deg: -5.0,
            elevation_max_deg: 5.0,
            ..LidarConfig::default()
        };
        let pose = RigidTransform::new(UnitQuaternion::IDENTITY, Vector3::new(0.0, 0.0, 5.0));
        let cloud = simulate_lidar(&scene, &pose, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let front: Vec<_> = cloud.points.iter().filter(|p| p.x > 0.0 && p.z > -4.0).collect();
        assert!(!front.is_empty());
        for p in front {
            // Analytic ray–plane range: 10 / (cosθ_el · cosθ_az) = |p| with p.x = 10.
            assert!((p.x - 10.0).abs() < 1e-4, "{p:?}");
        }
    }

    #[test]
    fn empty_scene_image_splits_sky_and_ground() {
        let scene = empty_scene();
        let cam = CameraModel::from_hfov(64, 32, 90.0).unwrap();
        let img = simulate_camera(&scene, &cam, &scene.camera_pose);
        let sky = (0.9f64 * 255.0).round() as u8;
        for col in 0..cam.width {
            let column: Vec<u8> = (0..cam.height).map(|r| img.get(r, col)).collect();
            let first_ground = column.iter().position(|&v| v != sky).unwrap_or(cam.height);
            assert!(column[..first_ground].iter().all(|&v| v == sky));
            assert!(column[first_ground..].iter().all(|&v| v < sky && v <= (0.35f64 * 255.0).round() as u8));
        }
        // Horizon row is the same for every column of a level camera.
        let horizon = |col: usize| (0..cam.height).position(|r| img.get(r, col) != sky);
        assert!((0..cam.width).all(|c| horizon(c) == horizon(0)));
    }

    #[test]
    fn box_footprint_matches_corner_projection() {
        let mut scene = empty_scene();
        scene.camera_pose = RigidTransform::new(look_rotation(0.0, 0.0), Vector3::new(0.0, 0.0, 2.0));
        scene.sky_value = 1.0;
        scene.boxes.push(SceneBox {
            min: Vector3::new(20.0, -2.0, 1.0),
            max: Vector3::new(21.0, 2.0, 3.0),
            albedo: 0.9,
        });
        scene.ground_albedo = 0.0;
        let cam = CameraModel::from_hfov(128, 64, 60.0).unwrap();
        let img = simulate_camera(&scene, &cam, &scene.camera_pose);
        // Front face corners only: the box is seen head-on.
        let corners: Vec<Vector3<f64>> = [(-2.0, 1.0), (2.0, 1.0), (-2.0, 3.0), (2.0, 3.0)]
            .iter()
            .map(|&(y, z)| Vector3::new(20.0, y, z))
            .collect();
        let world_to_cam = scene.camera_pose.inverse();
        let proj = project_points(&PointCloud::new(corners).unwrap(), &world_to_cam, &cam);
        assert_eq!(proj.len(), 4);
        let (umin, umax) = proj.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.u), b.max(p.u)));
        let (vmin, vmax) = proj.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.v), b.max(p.v)));
        let box_level = (shade(&scene, &Hit { range: 20.0, albedo: 0.9, normal: -Vector3::x() }) * 255.0).round() as u8;
        for row in 0..cam.height {
            for col in 0..cam.width {
                let (u, v) = (col as f64, row as f64);
                let inside = u > umin + 0.5 && u < umax - 0.5 && v > vmin + 0.5 && v < vmax - 0.5;
                let outside = u < umin - 0.5 || u > umax + 0.5 || v < vmin - 0.5 || v > vmax + 0.5;
                let px = img.get(row, col);
                if inside {
                    assert!((px as i32 - box_level as i32).abs() <= 1, "({row},{col})");
                }
                if outside {
                    assert!(px == 255 || px == 0, "({row},{col}) = {px}");
                }
            }
        }
    }

    #[test]
    fn sequence_stores_consistent_extrinsics() {
        let cfg = SceneConfig {
            image_width: 64,
            image_height: 32,
            lidar: LidarConfig {
                rows: 8,
                cols: 60,
                ..LidarConfig::default()
            },
            ..SceneConfig::default()
        };
        let seq = generate_sequence(&cfg, 10.0, 5, 3).unwrap();
        assert_eq!(seq.delta.translation, Vector3::zeros());
        let scene = generate_scene_with(&cfg, &mut sequence_rng(5, 3)).unwrap();
        for (i, f) in seq.frames.iter().enumerate() {
            assert_eq!(f.t_init, seq.delta.compose(&f.t_lc));
            let d = scene.trajectory[i].pose.translation - scene.camera_position();
            assert!((f.distance - d.x.hypot(d.y)).abs() < 1e-6);
        }
        assert_eq!(seq, generate_sequence(&cfg, 10.0, 5, 3).unwrap());
        let flat = generate_sequence(&cfg, 0.0, 5, 3).unwrap();
        assert!(flat.frames.iter().all(|f| f.t_init == f.t_lc));
    }
}
