//! Quick invariant suite run by `vfnav selftest`.

use nalgebra::{Point2, Point3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::Serialize;
use vfnav_core::calibration::{calibrate_shot, project, triangulate, ShotCapture};
use vfnav_core::distortion::{dewarp, distort, DistortionParams};
use vfnav_core::geometry::{compose, register_point_sets, FrameId, RigidTransform};
use vfnav_core::phantom::{acquire_shot, rig, CArmState, ExposureKind, ExposureLog, PediclePhantom, ShotRequest};
use vfnav_core::tracking::{sim_rng, stream};

use crate::autopilot::{run_protocol, AutopilotConfig};
use crate::scene::Scene;
use crate::session::{replay, Session};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(
        rng.random_range(-3.1..3.1),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.1..3.1),
    )
}

fn registration(seed: u64) -> CheckResult {
    let mut rng = sim_rng(seed, stream::SCENE, 0, 1);
    let mut worst: f64 = 0.0;
    let mut proper = true;
    for _ in 0..200 {
        let model: Vec<Point3<f64>> = (0..5)
            .map(|_| Point3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)))
            .collect();
        let g = RigidTransform::new("m", "o", random_rotation(&mut rng), Vector3::new(rng.random_range(-900.0..900.0), 0.0, -1500.0));
        let observed: Vec<_> = model.iter().map(|p| g.apply_point(p)).collect();
        match register_point_sets(&model, &observed) {
            Ok(r) => {
                worst = worst.max(r.rms);
                proper &= (r.transform.rotation_matrix().determinant() - 1.0).abs() < 1e-9;
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    CheckResult {
        name: "registration",
        passed: worst < 1e-9 && proper,
        detail: format!("worst rms {worst:.3e} mm over 200 sets"),
    }
}

fn shot_capture(
    seed: u64,
    index: u64,
    grid_in_patient: &RigidTransform<f64>,
    ref_pose: &RigidTransform<f64>,
    source: Point3<f64>,
    distortion: &DistortionParams<f64>,
) -> vfnav_core::Result<ShotCapture<f64>> {
    let grid = rig::grid();
    let c_arm = CArmState {
        grid_pose: compose(ref_pose, grid_in_patient)?,
        source_in_grid: source,
    };
    let req = ShotRequest {
        c_arm: &c_arm,
        ref_pose,
        grid: &grid,
        phantom: &PediclePhantom::lumbar(),
        distortion,
        image_noise_px: 0.0,
        kind: ExposureKind::CalibrationShot,
        duration_s: 1.0,
        timestamp_ms: 0,
    };
    let shot = acquire_shot(&req, &mut sim_rng(seed, stream::IMAGE, index, 0), &mut ExposureLog::new())?;
    Ok(ShotCapture {
        view_id: format!("v{index}"),
        label: "selftest".into(),
        observations: shot.observations,
        grid_pose: c_arm.grid_pose,
        ref_pose: ref_pose.clone(),
    })
}

fn source_and_triangulation(seed: u64) -> Vec<CheckResult> {
    let mut rng = sim_rng(seed, stream::SCENE, 0, 2);
    let d = rig::detector();
    let flat = DistortionParams::none(d.principal_point_px, d.image_radius_px);
    let ref_pose = RigidTransform::new(rig::REFERENCE_ID, FrameId::TRACKER, random_rotation(&mut rng), Vector3::new(0.0, 0.0, -1500.0));
    let mut source_err: f64 = 0.0;
    let mut tri_err: f64 = 0.0;
    let mut failures = 0;
    for i in 0..20u64 {
        let flex = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-15.0..15.0));
        let poses = [
            rig::oblique_grid_in_patient(rng.random_range(-20.0..20.0)),
            rig::lateral_grid_in_patient(),
        ];
        let views: Result<Vec<_>, _> = poses
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let cap = shot_capture(seed, 2 * i + k as u64, g, &ref_pose, rig::nominal_source() + flex, &flat)?;
                calibrate_shot(&cap, &rig::grid(), 4).map(|(v, _)| v)
            })
            .collect();
        let Ok(views) = views else {
            failures += 1;
            continue;
        };
        for v in &views {
            source_err = source_err.max((v.source - (rig::nominal_source() + flex)).norm());
        }
        let p = Point3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-60.0..20.0));
        let imgs: Result<Vec<Point2<f64>>, _> = views.iter().map(|v| project(v, &p)).collect();
        match imgs.and_then(|imgs| triangulate(&[&views[0], &views[1]], &imgs)) {
            Ok(t) => tri_err = tri_err.max((t.point - p).norm()),
            Err(_) => failures += 1,
        }
    }
    vec![
        CheckResult {
            name: "source estimation",
            passed: failures == 0 && source_err < 1e-6,
            detail: format!("worst error {source_err:.3e} mm over 40 noiseless shots"),
        },
        CheckResult {
            name: "triangulation",
            passed: failures == 0 && tri_err < 1e-6,
            detail: format!("worst error {tri_err:.3e} mm over 20 view pairs"),
        },
    ]
}

fn dewarp_fidelity(seed: u64) -> CheckResult {
    let params = rig::distortion();
    let ref_pose = RigidTransform::identity(rig::REFERENCE_ID, FrameId::TRACKER);
    let result = shot_capture(seed, 0, &rig::ap_grid_in_patient(), &ref_pose, rig::nominal_source(), &params)
        .and_then(|cap| calibrate_shot(&cap, &rig::grid(), 4));
    let Ok((view, _)) = result else {
        return CheckResult {
            name: "dewarp",
            passed: false,
            detail: "calibration failed".into(),
        };
    };
    let mut rng = sim_rng(seed, stream::SCENE, 0, 3);
    let mut sq = 0.0;
    let mut n = 0;
    while n < 500 {
        let ideal = Point2::new(rng.random_range(62.0..962.0), rng.random_range(62.0..962.0));
        let Ok(seen) = distort(&ideal, &params) else { continue };
        let Ok(back) = dewarp(&seen, &view.dewarp) else { continue };
        sq += (back - ideal).norm_squared();
        n += 1;
    }
    let rms = (sq / n as f64).sqrt();
    CheckResult {
        name: "dewarp",
        passed: rms < 0.5,
        detail: format!("held-out rms {rms:.4} px over {n} points"),
    }
}

fn replay_check(seed: u64) -> CheckResult {
    let scene = Scene {
        seed,
        ..Scene::default()
    };
    let outcome = Session::create(scene).and_then(|mut s| {
        run_protocol(&mut s, &AutopilotConfig::default())?;
        let log = s.log_jsonl();
        replay(&log).map(|r| (r.events, r.session.log_jsonl() == log))
    });
    match outcome {
        Ok((events, same)) => CheckResult {
            name: "replay",
            passed: same,
            detail: format!("{events} events replayed"),
        },
        Err(e) => CheckResult {
            name: "replay",
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn run(seed: u64) -> Vec<CheckResult> {
    let mut out = vec![registration(seed)];
    out.extend(source_and_triangulation(seed));
    out.push(dewarp_fidelity(seed));
    out.push(replay_check(seed));
    out
}
