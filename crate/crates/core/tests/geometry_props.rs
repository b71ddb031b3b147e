use mvx_core::geometry::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quat() -> impl Strategy<Value = UnitQuaternion> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 0.05)
        .prop_map(|(w, x, y, z)| UnitQuaternion::new_normalize(w, x, y, z).unwrap())
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (quat(), -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0).prop_map(|(q, x, y, z)| RigidTransform::new(q, Vector3::new(x, y, z)))
}

fn cloud() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0), 0..40)
        .prop_map(|v| PointCloud::new(v.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect()).unwrap())
}

fn camera() -> CameraModel {
    CameraModel::new(120.0, 110.0, 64.0, 32.0, 128, 64).unwrap()
}

proptest! {
    #[test]
    fn constructors_normalize(q in quat()) {
        prop_assert!((q.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotation_matrix_is_orthonormal(t in transform()) {
        let r = t.rotation_matrix();
        prop_assert!(((r.transpose() * r) - nalgebra::Matrix3::identity()).abs().max() < 1e-6);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn compose_with_inverse_is_identity(t in transform()) {
        let id = t.compose(&t.inverse());
        prop_assert!(angular_distance(&id.rotation, &UnitQuaternion::IDENTITY) < 1e-6);
        prop_assert!(id.translation.norm() < 1e-6);
    }

    #[test]
    fn projection_composes(c in cloud(), t1 in transform(), t2 in transform()) {
        let cam = camera();
        let direct = project_points(&c, &t2.compose(&t1), &cam);
        let staged = project_points(&c.transformed(&t1), &t2, &cam);
        prop_assert_eq!(direct.len(), staged.len());
        for (a, b) in direct.iter().zip(&staged) {
            prop_assert_eq!(a.index, b.index);
            prop_assert!((a.u - b.u).abs() < 1e-6 && (a.v - b.v).abs() < 1e-6 && (a.depth - b.depth).abs() < 1e-6);
        }
    }

    #[test]
    fn unprojection_recovers_camera_point(c in cloud(), t in transform()) {
        let cam = camera();
        for p in project_points(&c, &t, &cam) {
            let back = cam.unproject(p.u, p.v, p.depth);
            prop_assert!((back - t.apply(&c.points[p.index])).norm() < 1e-6);
        }
    }

    #[test]
    fn angular_distance_is_symmetric_and_double_covered(a in quat(), b in quat()) {
        prop_assert!((angular_distance(&a, &b) - angular_distance(&b, &a)).abs() < 1e-12);
        prop_assert!(angular_distance(&a, &a.negated()) < 1e-6);
        let d = angular_distance(&a, &b);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&d));
        // Independent route: angle of the relative rotation matrix.
        let rel = a.to_matrix().transpose() * b.to_matrix();
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        prop_assert!((d - cos.acos()).abs() < 1e-5);
    }

    #[test]
    fn depth_map_is_normalized_and_sparse(c in cloud(), t in transform()) {
        let cam = camera();
        let map = render_depth_map(&c, &t, &cam, DEFAULT_MAX_RANGE);
        prop_assert!(map.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(map.nonzero() <= c.len());
    }
}

#[test]
fn euler_round_trip_over_seeded_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let lim = 60f64.to_radians();
    for _ in 0..1000 {
        let e = EulerAngles::new(rng.random_range(-lim..lim), rng.random_range(-lim..lim), rng.random_range(-lim..lim));
        let back = UnitQuaternion::from_euler(e).to_euler().unwrap();
        for (a, b) in [(e.yaw, back.yaw), (e.pitch, back.pitch), (e.roll, back.roll)] {
            assert!((a - b).abs() < 1e-6, "{e:?} -> {back:?}");
        }
    }
}

#[test]
fn euler_matches_elementary_rotation_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let (y, p, r) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), y);
        let ry = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), p);
        let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), r);
        let oracle = (rz * ry * rx).into_inner();
        let ours = UnitQuaternion::from_euler(EulerAngles::new(y, p, r)).to_matrix();
        assert!((oracle - ours).abs().max() < 1e-12);
    }
}

#[test]
fn perturbation_marginals_are_uniform() {
    let range = 20.0;
    let mut counts = [[0usize; 10]; 3];
    let n = 10_000;
    for seed in 0..n {
        let t = sample_rotation_perturbation(range, seed as u64);
        let e = t.rotation.to_euler().unwrap().to_degrees();
        for axis in 0..3 {
            assert!(e[axis].abs() <= range + 1e-9);
            let bin = (((e[axis] + range) / (2.0 * range)) * 10.0).floor().clamp(0.0, 9.0) as usize;
            counts[axis][bin] += 1;
        }
    }
    for axis in counts {
        for c in axis {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.1).abs() <= 0.03, "{axis:?}");
        }
    }
}

#[test]
fn perturbation_is_deterministic() {
    let a = sample_rotation_perturbation(10.0, 42);
    let b = sample_rotation_perturbation(10.0, 42);
    assert_eq!(a.rotation.to_array().map(f64::to_bits), b.rotation.to_array().map(f64::to_bits));
    assert_eq!(a.translation, Vector3::zeros());
}
