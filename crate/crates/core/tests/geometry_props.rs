use nalgebra::{Point3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use vfnav_core::geometry::{
    closest_point_between, compose, nearest_point_to_lines, register_point_sets, Ray3, RigidTransform,
};

fn arb_rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
    (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1).prop_map(|(r, p, y)| UnitQuaternion::from_euler_angles(r, p, y))
}

fn arb_vec(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn arb_transform(from: &'static str, to: &'static str) -> impl Strategy<Value = RigidTransform<f64>> {
    (arb_rotation(), arb_vec(1000.0)).prop_map(move |(q, t)| RigidTransform::new(from, to, q, t))
}

/// Marker constellations with a guaranteed non-collinear spread.
fn arb_markers() -> impl Strategy<Value = Vec<Point3<f64>>> {
    prop::collection::vec(arb_vec(100.0), 1..6).prop_map(|extra| {
        let mut pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(60.0, 0.0, 0.0),
            Point3::new(0.0, 45.0, 10.0),
        ];
        pts.extend(extra.into_iter().map(Point3::from));
        pts
    })
}

fn assert_same_pose(a: &RigidTransform<f64>, b: &RigidTransform<f64>, tol: f64) {
    assert!(a.angle_to(b) < tol, "rotation differs by {}", a.angle_to(b));
    assert!(a.distance_to(b) < tol, "translation differs by {}", a.distance_to(b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn registration_recovers_exact_motion(markers in arb_markers(), g in arb_transform("model", "observed")) {
        let observed: Vec<_> = markers.iter().map(|p| g.apply_point(p)).collect();
        let reg = register_point_sets(&markers, &observed).unwrap();
        prop_assert!(reg.rms < 1e-9);
        prop_assert!((reg.transform.rotation_matrix().determinant() - 1.0).abs() < 1e-12);
        for (m, o) in markers.iter().zip(&observed) {
            prop_assert!((reg.transform.apply_point(m) - o).norm() < 1e-9);
        }
    }

    #[test]
    fn registration_is_equivariant(
        markers in arb_markers(),
        noise in prop::collection::vec(arb_vec(0.5), 8),
        g in arb_transform("model", "observed"),
        h in arb_transform("observed", "observed"),
    ) {
        let observed: Vec<_> = markers
            .iter()
            .zip(noise.iter().cycle())
            .map(|(p, n)| g.apply_point(p) + n)
            .collect();
        let moved: Vec<_> = observed.iter().map(|p| h.apply_point(p)).collect();
        let a = register_point_sets(&markers, &observed).unwrap();
        let b = register_point_sets(&markers, &moved).unwrap();
        let expected = compose(&h, &a.transform).unwrap();
        assert_same_pose(&b.transform, &expected, 1e-8);
        prop_assert!((a.rms - b.rms).abs() < 1e-9);
    }

    #[test]
    fn compose_is_associative(
        a in arb_transform("c", "d"),
        b in arb_transform("b", "c"),
        c in arb_transform("a", "b"),
        p in arb_vec(500.0),
    ) {
        let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
        let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
        assert_same_pose(&left, &right, 1e-9);
        prop_assert_eq!(left.from_frame().as_str(), "a");
        prop_assert_eq!(left.to_frame().as_str(), "d");
        let p = Point3::from(p);
        let chained = a.apply_point(&b.apply_point(&c.apply_point(&p)));
        prop_assert!((left.apply_point(&p) - chained).norm() < 1e-9);
    }

    #[test]
    fn inverse_undoes_transform(a in arb_transform("a", "b"), p in arb_vec(500.0)) {
        let id = compose(&a.inverse(), &a).unwrap();
        prop_assert!(id.angle_to(&RigidTransform::identity("a", "a")) < 1e-12);
        prop_assert!(id.translation().norm() < 1e-9);
        let p = Point3::from(p);
        prop_assert!((a.inverse().apply_point(&a.apply_point(&p)) - p).norm() < 1e-9);
    }

    #[test]
    fn json_round_trip(a in arb_transform("x", "y")) {
        let back: RigidTransform<f64> = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_same_pose(&a, &back, 1e-12);
        prop_assert!(back.rotation().w >= 0.0);
    }
}

/// Coarse-to-fine grid search for the closest pair of points on two lines.
fn grid_search_closest(r1: &Ray3<f64>, r2: &Ray3<f64>) -> (f64, f64, f64) {
    let dist = |s: f64, t: f64| (r1.point_at(s) - r2.point_at(t)).norm();
    let (mut cs, mut ct, mut half) = (0.0, 0.0, 2000.0);
    for _ in 0..40 {
        let step = half / 20.0;
        let mut best = (f64::INFINITY, cs, ct);
        for i in -20..=20 {
            for j in -20..=20 {
                let (s, t) = (cs + i as f64 * step, ct + j as f64 * step);
                let d = dist(s, t);
                if d < best.0 {
                    best = (d, s, t);
                }
            }
        }
        cs = best.1;
        ct = best.2;
        half = step * 2.0;
    }
    (dist(cs, ct), cs, ct)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closest_point_matches_grid_search(
        o1 in arb_vec(100.0), d1 in arb_vec(1.0),
        o2 in arb_vec(100.0), d2 in arb_vec(1.0),
    ) {
        prop_assume!(d1.norm() > 0.2 && d2.norm() > 0.2);
        prop_assume!(d1.normalize().cross(&d2.normalize()).norm() > 0.2);
        let r1 = Ray3::new(Point3::from(o1), d1).unwrap();
        let r2 = Ray3::new(Point3::from(o2), d2).unwrap();
        let got = closest_point_between(&r1, &r2).unwrap();
        let (gap, s, t) = grid_search_closest(&r1, &r2);
        prop_assert!((got.gap - gap).abs() < 1e-6, "gap {} vs {}", got.gap, gap);
        prop_assert!((got.s - s).abs() < 1e-4 && (got.t - t).abs() < 1e-4);
        let mid = nalgebra::center(&r1.point_at(s), &r2.point_at(t));
        prop_assert!((got.midpoint - mid).norm() < 1e-4);
    }

    #[test]
    fn bundle_point_is_exact_for_concurrent_lines(
        p in arb_vec(200.0),
        dirs in prop::collection::vec(arb_vec(1.0), 2..6),
        offsets in prop::collection::vec(-300.0f64..300.0, 6),
    ) {
        let p = Point3::from(p);
        let lines: Vec<Ray3<f64>> = dirs
            .iter()
            .zip(&offsets)
            .filter(|(d, _)| d.norm() > 0.2)
            .map(|(d, s)| {
                let d = d.normalize();
                Ray3::new(p - d * *s, d).unwrap()
            })
            .collect();
        prop_assume!(lines.len() >= 2);
        match nearest_point_to_lines(&lines, 1e10) {
            Ok(fit) => {
                prop_assert!((fit.point - p).norm() < 1e-8);
                prop_assert!(fit.rms_distance < 1e-8);
            }
            Err(_) => prop_assert!(lines
                .iter()
                .all(|l| l.direction.cross(&lines[0].direction).norm() < 1e-4)),
        }
    }
}

/// Minimizes the summed squared line distance by coarse-to-fine 3-D search.
fn grid_search_bundle(lines: &[Ray3<f64>]) -> Point3<f64> {
    let cost = |p: &Point3<f64>| lines.iter().map(|l| l.line_distance(p).powi(2)).sum::<f64>();
    let mut c = Point3::origin();
    let mut half = 400.0;
    for _ in 0..40 {
        let step = half / 8.0;
        let mut best = (f64::INFINITY, c);
        for i in -8..=8 {
            for j in -8..=8 {
                for k in -8..=8 {
                    let q = c + Vector3::new(i as f64, j as f64, k as f64) * step;
                    let v = cost(&q);
                    if v < best.0 {
                        best = (v, q);
                    }
                }
            }
        }
        c = best.1;
        half = step * 2.0;
    }
    c
}

#[test]
fn perturbed_bundle_matches_grid_search() {
    let lines = vec![
        Ray3::new(Point3::new(0.0, 0.0, 1000.0), Vector3::new(0.01, 0.02, -1.0)).unwrap(),
        Ray3::new(Point3::new(1000.0, 0.0, 0.0), Vector3::new(-1.0, 0.015, -0.02)).unwrap(),
        Ray3::new(Point3::new(600.0, 600.0, 600.0), Vector3::new(-1.0, -1.02, -0.97)).unwrap(),
    ];
    let fit = nearest_point_to_lines(&lines, 1e10).unwrap();
    let oracle = grid_search_bundle(&lines);
    assert!((fit.point - oracle).norm() < 1e-5, "{} vs {}", fit.point, oracle);
    assert!(fit.rms_distance > 0.1);
}
