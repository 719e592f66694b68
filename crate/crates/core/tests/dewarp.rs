mod common;

use common::*;
use nalgebra::Point2;
use rand::Rng;
use vfnav_core::calibration::calibrate_shot;
use vfnav_core::distortion::{dewarp, distort, fit_dewarp, DewarpConfig, GridObservation, Plate};
use vfnav_core::phantom::rig;
use vfnav_core::tracking::{gaussian, sim_rng, stream};

fn lattice_observations(noise_px: f64, seed: u64) -> Vec<GridObservation<f64>> {
    let params = rig::distortion();
    let mut rng = sim_rng(seed, stream::IMAGE, 0, 0);
    let mut out = Vec::new();
    for i in -5..=5 {
        for j in -5..=5 {
            let ideal = p2(512.0 + 84.0 * i as f64, 512.0 + 84.0 * j as f64);
            if (ideal - params.center).norm() > params.domain_radius {
                continue;
            }
            let seen = distort(&ideal, &params).unwrap() + nalgebra::Vector2::new(
                gaussian(&mut rng, noise_px),
                gaussian(&mut rng, noise_px),
            );
            out.push(GridObservation {
                plate: Plate::Lower,
                fiducial_id: out.len() as u32,
                image_point: seen,
                truth_3d: nalgebra::Point3::new(ideal.x, ideal.y, 0.0),
            });
        }
    }
    out
}

fn fit(noise_px: f64) -> vfnav_core::DewarpModel64 {
    let config = DewarpConfig {
        degree: 4,
        center: p2(512.0, 512.0),
        image_radius: 450.0,
    };
    fit_dewarp(&lattice_observations(noise_px, 3), |o| Ok(p2(o.truth_3d.x, o.truth_3d.y)), &config).unwrap()
}

fn held_out(model: &vfnav_core::DewarpModel64, n: usize) -> Vec<f64> {
    let params = rig::distortion();
    let mut rng = sim_rng(4, stream::SCENE, 0, 0);
    let mut errs = Vec::new();
    while errs.len() < n {
        let ideal = p2(rng.random_range(62.0..962.0), rng.random_range(62.0..962.0));
        if (ideal - params.center).norm() > params.domain_radius {
            continue;
        }
        let seen = distort(&ideal, &params).unwrap();
        if !model.contains(&seen) {
            continue;
        }
        errs.push((dewarp(&seen, model).unwrap() - ideal).norm());
    }
    errs
}

#[test]
fn round_trip_error_is_bounded_by_held_out_rms() {
    let model = fit(0.0);
    let errs = held_out(&model, 1000);
    let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
    let max = errs.iter().cloned().fold(0.0, f64::max);
    assert!(rms < 0.5, "rms {rms}");
    assert!(max <= 5.0 * rms.max(1e-3), "max {max} rms {rms}");
}

#[test]
fn noisy_fit_still_generalizes() {
    let errs = held_out(&fit(0.3), 500);
    let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
    assert!(rms < 0.5, "rms {rms}");
}

fn line_residual(pts: &[Point2<f64>]) -> f64 {
    // orthogonal distance to the total-least-squares line
    let n = pts.len() as f64;
    let c = pts.iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p.coords) / n;
    let mut m = nalgebra::Matrix2::zeros();
    for p in pts {
        let d = p.coords - c;
        m += d * d.transpose();
    }
    let e = m.symmetric_eigen();
    (e.eigenvalues.min() / n).sqrt()
}

#[test]
fn dewarp_straightens_lines() {
    let model = fit(0.0);
    let params = rig::distortion();
    for (a, b) in [((150.0, 300.0), (870.0, 340.0)), ((300.0, 120.0), (330.0, 900.0)), ((150.0, 700.0), (700.0, 880.0))] {
        let ideal: Vec<_> = (0..=40)
            .map(|k| {
                let t = k as f64 / 40.0;
                p2(a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
            })
            .filter(|p| (p - params.center).norm() < 400.0)
            .collect();
        let seen: Vec<_> = ideal.iter().map(|p| distort(p, &params).unwrap()).collect();
        let restored: Vec<_> = seen.iter().filter_map(|p| dewarp(p, &model).ok()).collect();
        assert!(restored.len() > 10);
        let before = line_residual(&seen);
        let after = line_residual(&restored);
        assert!(before > 0.2, "distortion bends the line ({before})");
        assert!(after < 0.2 * before, "{after} vs {before}");
    }
}

#[test]
fn calibration_residual_grows_with_image_noise() {
    let ref_pose = reference_pose_at(nalgebra::UnitQuaternion::identity(), nalgebra::Vector3::new(0.0, 0.0, -1500.0));
    let mut last = -1.0;
    for noise in [0.0, 0.2, 0.5, 1.0] {
        let shot = simulate_shot(
            5,
            0,
            c_arm_at(&ref_pose, &rig::ap_grid_in_patient(), rig::nominal_source()),
            &ref_pose,
            &rig::distortion(),
            noise,
        );
        let (_, report) = calibrate_shot(&shot.capture, &rig::grid(), 4).unwrap();
        assert!(report.dewarp_fit_rms_px > last);
        last = report.dewarp_fit_rms_px;
        assert_eq!(report.upper_fiducials_used + report.upper_fiducials_dropped, 9);
    }
}
