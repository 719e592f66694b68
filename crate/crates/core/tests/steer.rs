use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use vfnav_core::geometry::{compose, RigidTransform};
use vfnav_core::navigation::{steer, SteerCommand, SteerLimits};
use vfnav_core::phantom::rig;
use vfnav_core::tracking::tool_in_reference;

fn setup() -> (RigidTransform<f64>, RigidTransform<f64>) {
    let ref_pose = RigidTransform::new(
        rig::REFERENCE_ID,
        "tracker",
        UnitQuaternion::from_euler_angles(0.1, -0.3, 2.0),
        Vector3::new(50.0, -20.0, -1500.0),
    );
    let tool_to_ref = RigidTransform::new(
        rig::TOOL_ID,
        rig::REFERENCE_ID,
        UnitQuaternion::from_euler_angles(3.0, 0.2, 0.1),
        Vector3::new(20.0, 0.0, -5.0),
    );
    let tool_pose = compose(&ref_pose, &tool_to_ref).unwrap();
    (ref_pose, tool_pose)
}

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

#[test]
fn zero_command_keeps_pose() {
    let (ref_pose, tool_pose) = setup();
    let out = steer(&rig::tool_body(), &tool_pose, &ref_pose, &SteerCommand::zero(), &SteerLimits::default()).unwrap();
    assert!(out.pose.distance_to(&tool_pose) < 1e-12 && out.pose.angle_to(&tool_pose) < 1e-12);
    assert!(!out.clamped);
}

#[test]
fn translation_moves_tip_and_keeps_axis() {
    let (ref_pose, tool_pose) = setup();
    let tool = rig::tool_body();
    let before = tool_in_reference(&tool, &tool_pose, &ref_pose).unwrap();
    let cmd = SteerCommand {
        translate_mm: Vector3::new(1.0, -0.5, 0.25),
        rotate_deg: Vector3::zeros(),
    };
    let out = steer(&tool, &tool_pose, &ref_pose, &cmd, &SteerLimits::default()).unwrap();
    let after = tool_in_reference(&tool, &out.pose, &ref_pose).unwrap();
    assert!((after.tip - before.tip - cmd.translate_mm).norm() < 1e-9);
    assert!((after.axis.direction.into_inner() - before.axis.direction.into_inner()).norm() < 1e-12);
}

#[test]
fn rotation_pivots_about_tip() {
    let (ref_pose, tool_pose) = setup();
    let tool = rig::tool_body();
    let before = tool_in_reference(&tool, &tool_pose, &ref_pose).unwrap();
    let cmd = SteerCommand {
        translate_mm: Vector3::zeros(),
        rotate_deg: Vector3::new(0.0, 0.0, 1.5),
    };
    let out = steer(&tool, &tool_pose, &ref_pose, &cmd, &SteerLimits::default()).unwrap();
    let after = tool_in_reference(&tool, &out.pose, &ref_pose).unwrap();
    assert!((after.tip - before.tip).norm() < 1e-9);
    let d = before.axis.direction.into_inner();
    let (c, s) = (1.5f64.to_radians().cos(), 1.5f64.to_radians().sin());
    let expected = Vector3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z);
    assert!((after.axis.direction.into_inner() - expected).norm() < 1e-12);
}

#[test]
fn commands_beyond_limits_are_clamped() {
    let (ref_pose, tool_pose) = setup();
    let tool = rig::tool_body();
    let cmd = SteerCommand {
        translate_mm: Vector3::new(30.0, 40.0, 0.0),
        rotate_deg: Vector3::new(0.0, 10.0, 0.0),
    };
    let out = steer(&tool, &tool_pose, &ref_pose, &cmd, &SteerLimits::default()).unwrap();
    assert!(out.clamped);
    assert!((out.applied.translate_mm - Vector3::new(1.2, 1.6, 0.0)).norm() < 1e-12);
    assert!((out.applied.rotate_deg - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn inverses_in_reverse_order_restore_pose(
        steps in prop::collection::vec((vec3(), vec3()), 1..8),
    ) {
        let (ref_pose, start) = setup();
        let tool = rig::tool_body();
        let limits = SteerLimits::default();
        let mut pose = start.clone();
        let mut applied = Vec::new();
        for (t, r) in &steps {
            let out = steer(&tool, &pose, &ref_pose, &SteerCommand { translate_mm: *t, rotate_deg: *r }, &limits).unwrap();
            applied.push(out.applied);
            pose = out.pose;
        }
        for cmd in applied.iter().rev() {
            pose = steer(&tool, &pose, &ref_pose, &cmd.inverse(), &limits).unwrap().pose;
        }
        prop_assert!(pose.distance_to(&start) < 1e-9);
        prop_assert!(pose.angle_to(&start) < 1e-9);
    }
}
