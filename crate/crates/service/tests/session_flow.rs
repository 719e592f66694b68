use std::collections::HashSet;

use vfnav_core::navigation::{SteerCommand, ViewOverlay};
use vfnav_core::phantom::BreachGrade;
use vfnav_service::autopilot::{run_protocol, AutopilotConfig};
use vfnav_service::session::{FrameUpdate, NavigationStart, PhaseChange};
use vfnav_service::{replay, EventKind, Phase, Scene, ServiceError, Session};

fn noiseless() -> Scene {
    let mut scene = Scene::default();
    scene.tracker.marker_sigma_mm = 0.0;
    scene.imaging.image_noise_px = 0.0;
    scene
}

#[test]
fn canonical_flow_succeeds() {
    let mut s = Session::create(Scene::default()).unwrap();
    assert_eq!(s.phase(), Phase::Setup);
    s.attach_reference().unwrap();
    assert_eq!(s.phase(), Phase::ReferenceAttached);
    let cal = s.take_shot("calibration").unwrap();
    assert_eq!(s.phase(), Phase::Calibrated);
    assert!(s.views().is_empty());
    assert_eq!(cal.upper_fiducials_used + cal.upper_fiducials_dropped, 9);
    s.take_shot("AP").unwrap();
    s.take_shot("lateral").unwrap();
    assert_eq!(s.views().len(), 2);
    let start = s.start_navigation().unwrap();
    assert_eq!(start.views.len(), 2);
    let update = s.tick().unwrap();
    assert_eq!(update.overlays.len(), 2);
    s.steer(SteerCommand::zero()).unwrap();
    let report = s.insert_and_grade().unwrap();
    assert_eq!(s.phase(), Phase::Done);
    assert!((report.exposure_s - 3.5).abs() < 1e-9);
    assert!((report.exposure_ratio - 3.5 / 11.5).abs() < 1e-12);
}

#[test]
fn shot_before_attach_is_illegal() {
    let mut s = Session::create(Scene::default()).unwrap();
    let err = s.take_shot("AP").unwrap_err();
    match err {
        ServiceError::IllegalTransition { phase, reason, .. } => {
            assert_eq!(phase, Phase::Setup);
            assert!(reason.contains("reference not attached"));
        }
        other => panic!("unexpected {other:?}"),
    }
    // failed commands leave no trace in the log
    assert_eq!(s.events().len(), 1);
}

#[test]
fn illegal_transitions_are_rejected() {
    let mut s = Session::create(Scene::default()).unwrap();
    assert!(matches!(s.start_navigation(), Err(ServiceError::IllegalTransition { .. })));
    assert!(matches!(s.tick(), Err(ServiceError::IllegalTransition { .. })));
    s.attach_reference().unwrap();
    assert!(matches!(s.attach_reference(), Err(ServiceError::IllegalTransition { .. })));
    s.take_shot("calibration").unwrap();
    s.take_shot("AP").unwrap();
    // one navigation view is not enough
    assert!(matches!(s.start_navigation(), Err(ServiceError::IllegalTransition { .. })));
    s.take_shot("lateral").unwrap();
    s.start_navigation().unwrap();
    assert!(matches!(s.take_shot("AP"), Err(ServiceError::IllegalTransition { .. })));
    s.insert_and_grade().unwrap();
    assert!(matches!(s.steer(SteerCommand::zero()), Err(ServiceError::IllegalTransition { .. })));
    assert!(matches!(s.insert_and_grade(), Err(ServiceError::IllegalTransition { .. })));
}

#[test]
fn unknown_shot_label_is_a_validation_error() {
    let mut s = Session::create(Scene::default()).unwrap();
    s.attach_reference().unwrap();
    let err = s.take_shot("oblique-7").unwrap_err();
    assert!(matches!(err, ServiceError::SceneValidation { .. }));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn event_log_is_a_total_order() {
    let mut s = Session::create(Scene::default()).unwrap();
    run_protocol(&mut s, &AutopilotConfig::default()).unwrap();
    let events = s.events();
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64);
    }
    for w in events.windows(2) {
        assert!(w[0].timestamp_ms <= w[1].timestamp_ms);
    }
    assert_eq!(events.iter().filter(|e| e.kind == EventKind::Shot).count(), 3);
    assert_eq!(events.iter().filter(|e| e.kind == EventKind::Report).count(), 1);
}

#[test]
fn overlays_only_reference_calibrated_views() {
    let mut s = Session::create(Scene::default()).unwrap();
    run_protocol(&mut s, &AutopilotConfig::default()).unwrap();
    let mut known: HashSet<String> = HashSet::new();
    for e in s.events() {
        match e.kind {
            EventKind::PhaseChange => {
                let change: PhaseChange = serde_json::from_value(e.payload.clone()).unwrap();
                if let Some(NavigationStart { views, .. }) = change.navigation {
                    known.extend(views.into_iter().map(|v| v.view_id));
                }
            }
            EventKind::Frame => {
                let update: FrameUpdate = serde_json::from_value(e.payload.clone()).unwrap();
                for o in &update.overlays {
                    assert!(known.contains(o.view_id()), "{} not calibrated", o.view_id());
                }
            }
            _ => {}
        }
    }
    assert_eq!(known.len(), 2);
}

#[test]
fn noiseless_steering_reaches_target() {
    let mut s = Session::create(noiseless()).unwrap();
    let summary = run_protocol(&mut s, &AutopilotConfig::default()).unwrap();
    assert!(summary.converged);
    let report = s.grade().unwrap();
    assert_eq!(report.grade, BreachGrade::Contained);
    assert!(report.error.tip_offset_mm < 0.5);
    assert!((report.exposure_s - 3.5).abs() < 1e-9);
}

#[test]
fn replay_reproduces_log() {
    let mut s = Session::create(Scene::default()).unwrap();
    run_protocol(&mut s, &AutopilotConfig::default()).unwrap();
    let log = s.log_jsonl();
    let outcome = replay(&log).unwrap();
    assert_eq!(outcome.session.log_jsonl(), log);
    assert_eq!(outcome.session.grade(), s.grade());
}

#[test]
fn replay_detects_tampering() {
    let mut s = Session::create(Scene::default()).unwrap();
    run_protocol(&mut s, &AutopilotConfig::default()).unwrap();
    let log = s.log_jsonl();
    let mut lines: Vec<String> = log.lines().map(String::from).collect();
    let idx = lines.iter().position(|l| l.contains("\"kind\":\"frame\"")).unwrap();
    lines[idx] = lines[idx].replacen("\"timestamp_ms\":", "\"timestamp_ms\":1", 1);
    let err = replay(&lines.join("\n")).unwrap_err();
    assert!(matches!(err, ServiceError::ReplayDiverged { seq } if seq == idx as u64), "{err:?}");
}

#[test]
fn replay_rejects_malformed_logs() {
    assert!(matches!(replay(""), Err(ServiceError::MalformedLog { .. })));
    let err = replay("{\"seq\":0}\n").unwrap_err();
    assert!(matches!(err, ServiceError::MalformedLog { line: 1, .. }));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn partial_sessions_replay_too() {
    let mut s = Session::create(Scene::default()).unwrap();
    s.attach_reference().unwrap();
    s.take_shot("calibration").unwrap();
    let log = s.log_jsonl();
    assert_eq!(replay(&log).unwrap().session.phase(), Phase::Calibrated);
}

#[test]
fn logged_session_writes_jsonl_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let mut s = Session::create_logged(Scene::default(), &path).unwrap();
    run_protocol(&mut s, &AutopilotConfig::default()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, s.log_jsonl());
    replay(&text).unwrap();
}

#[test]
fn overlay_serialization_is_tagged() {
    let mut s = Session::create(Scene::default()).unwrap();
    s.attach_reference().unwrap();
    for l in ["calibration", "AP", "lateral"] {
        s.take_shot(l).unwrap();
    }
    s.start_navigation().unwrap();
    let update = s.tick().unwrap();
    let json = serde_json::to_value(&update.overlays[0]).unwrap();
    assert_eq!(json["status"], "segment");
    assert!(matches!(update.overlays[0], ViewOverlay::Segment(_)));
}
