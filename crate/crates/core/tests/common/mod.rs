#![allow(dead_code)]

use nalgebra::{Point2, Point3, UnitQuaternion, Vector3};
use rand::Rng;
use vfnav_core::calibration::{calibrate_shot, CalibratedView, SourceEstimate};
use vfnav_core::distortion::{DewarpModel, DistortionParams};
use vfnav_core::geometry::{compose, FrameId, RigidTransform};
use vfnav_core::phantom::{acquire_shot, rig, CArmState, ExposureKind, ExposureLog, PediclePhantom, ShotRequest};
use vfnav_core::calibration::ShotCapture;
use vfnav_core::tracking::{sim_rng, stream};

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(
        rng.random_range(-3.1..3.1),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.1..3.1),
    )
}

pub fn random_pose<R: Rng + ?Sized>(rng: &mut R, from: &str, to: &str) -> RigidTransform<f64> {
    RigidTransform::new(
        from,
        to,
        random_rotation(rng),
        Vector3::new(
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
        ),
    )
}

/// View built directly from known geometry, with an identity dewarp.
pub fn exact_view(id: &str, grid_in_patient: RigidTransform<f64>, source: Point3<f64>) -> CalibratedView<f64> {
    let det = rig::detector();
    CalibratedView::new(
        id,
        id,
        DewarpModel::identity(det.principal_point_px, det.image_radius_px),
        SourceEstimate {
            source,
            residual: 0.0,
            fiducials_used: 9,
            few_fiducials: false,
        },
        det,
        200.0,
        grid_in_patient,
    )
    .unwrap()
}

pub struct SimulatedShot {
    pub c_arm: CArmState,
    pub capture: ShotCapture<f64>,
}

/// Images the default grid from `c_arm` with true tracker poses.
pub fn simulate_shot(
    seed: u64,
    index: u64,
    c_arm: CArmState,
    ref_pose: &RigidTransform<f64>,
    distortion: &DistortionParams<f64>,
    noise_px: f64,
) -> SimulatedShot {
    let grid = rig::grid();
    let phantom = PediclePhantom::lumbar();
    let mut log = ExposureLog::new();
    let req = ShotRequest {
        c_arm: &c_arm,
        ref_pose,
        grid: &grid,
        phantom: &phantom,
        distortion,
        image_noise_px: noise_px,
        kind: ExposureKind::CalibrationShot,
        duration_s: 1.0,
        timestamp_ms: 0,
    };
    let mut rng = sim_rng(seed, stream::IMAGE, index, 0);
    let shot = acquire_shot(&req, &mut rng, &mut log).unwrap();
    let capture = ShotCapture {
        view_id: format!("v{index}"),
        label: "shot".into(),
        observations: shot.observations,
        grid_pose: c_arm.grid_pose.clone(),
        ref_pose: ref_pose.clone(),
    };
    SimulatedShot { c_arm, capture }
}

pub fn calibrated(shot: &SimulatedShot) -> CalibratedView<f64> {
    calibrate_shot(&shot.capture, &rig::grid(), 4).unwrap().0
}

pub fn reference_pose_at(rot: UnitQuaternion<f64>, t: Vector3<f64>) -> RigidTransform<f64> {
    RigidTransform::new(rig::REFERENCE_ID, FrameId::TRACKER, rot, t)
}

pub fn c_arm_at(
    ref_pose: &RigidTransform<f64>,
    grid_in_patient: &RigidTransform<f64>,
    source: Point3<f64>,
) -> CArmState {
    CArmState {
        grid_pose: compose(ref_pose, grid_in_patient).unwrap(),
        source_in_grid: source,
    }
}

pub fn zero_distortion() -> DistortionParams<f64> {
    let d = rig::detector();
    DistortionParams::none(d.principal_point_px, d.image_radius_px)
}

pub fn p2(x: f64, y: f64) -> Point2<f64> {
    Point2::new(x, y)
}
