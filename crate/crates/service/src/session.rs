//! One navigated procedure as an event-sourced state machine.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};
use vfnav_core::calibration::{calibrate_shot, CalibratedView, CalibrationGridGeometry, CalibrationReport, ShotCapture};
use vfnav_core::geometry::{compose, rotation_from_degrees, RigidTransform};
use vfnav_core::navigation::{
    steer, trajectory_error, NavigationSession, PlannedTrajectory, SteerCommand, TrajectoryError, ViewOverlay,
};
use vfnav_core::phantom::{
    acquire_shot, breach_depth, exposure_compare, grade, rig, BreachGrade, CArmState, ExposureEvent, ExposureKind,
    ExposureLog, LandmarkImage, PediclePhantom, ScrewPlacement, ShotRequest, Side,
};
use vfnav_core::study::tool_in_patient;
use vfnav_core::tracking::{sim_rng, stream, tool_in_reference, Localizer, TrackerFrame};

use crate::error::{Result, ServiceError};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Setup,
    ReferenceAttached,
    Calibrated,
    Navigating,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Setup => "setup",
            Phase::ReferenceAttached => "reference_attached",
            Phase::Calibrated => "calibrated",
            Phase::Navigating => "navigating",
            Phase::Done => "done",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Frame,
    Shot,
    Steer,
    PhaseChange,
    Report,
}

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    /// Simulated clock, ms.
    pub timestamp_ms: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

impl EventRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event records serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub from: Option<Phase>,
    pub to: Phase,
    /// Present on the first record only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<Scene>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub navigation: Option<NavigationStart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub label: String,
    pub kind: ExposureKind,
    pub exposure: ExposureEvent,
    pub frame: TrackerFrame<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<CalibrationReport>,
    pub landmarks: Vec<LandmarkImage>,
    /// No phantom landmark was imaged.
    pub empty: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSummary {
    pub view_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationStart {
    pub views: Vec<ViewSummary>,
    pub target: PlannedTrajectory<f64>,
    pub target_overlays: Vec<ViewOverlay<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameUpdate {
    pub frame: TrackerFrame<f64>,
    pub overlays: Vec<ViewOverlay<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerRecord {
    pub requested: SteerCommand<f64>,
    pub applied: SteerCommand<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub side: Side,
    pub breach_mm: f64,
    pub grade: BreachGrade,
    pub error: TrajectoryError,
    pub exposure_s: f64,
    pub conventional_exposure_s: f64,
    pub exposure_ratio: f64,
    /// Carried from the scene; not simulated.
    pub operative_time_virtual_min: f64,
    pub operative_time_conventional_min: f64,
}

/// Session state. All randomness is derived from the scene seed and event
/// counters, so the same commands always produce the same log.
pub struct Session {
    scene: Scene,
    phase: Phase,
    localizer: Localizer<f64>,
    ref_pose: RigidTransform<f64>,
    grid: CalibrationGridGeometry<f64>,
    phantom: PediclePhantom,
    plan: PlannedTrajectory<f64>,
    views: Vec<CalibratedView<f64>>,
    reports: Vec<CalibrationReport>,
    shots_taken: u64,
    exposure: ExposureLog,
    navigation: Option<NavigationSession<f64>>,
    grade: Option<GradeReport>,
    log: Vec<EventRecord>,
    sink: Option<BufWriter<File>>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("phase", &self.phase)
            .field("views", &self.views.len())
            .field("events", &self.log.len())
            .finish()
    }
}

fn illegal(phase: Phase, action: &'static str, reason: impl Into<String>) -> ServiceError {
    ServiceError::IllegalTransition {
        phase,
        action,
        reason: reason.into(),
    }
}

impl Session {
    pub fn create(scene: Scene) -> Result<Self> {
        scene.validate()?;
        let phantom = scene.phantom();
        let pedicle = phantom.pedicle(scene.tool.target_side).clone();
        let plan = PlannedTrajectory {
            axis: pedicle.axis.clone(),
            depth_mm: scene.screw.insertion_depth_mm,
        };
        let ref_pose = scene.reference_pose();
        let tip = pedicle.axis.origin + Vector3::from(scene.tool.entry_offset_mm);
        let dir = Unit::new_normalize(
            rotation_from_degrees(&Vector3::from(scene.tool.tilt_deg)) * pedicle.axis.direction.into_inner(),
        );
        let tool_pose = compose(&ref_pose, &tool_in_patient(&tip, &dir, 0.0))?;

        let mut localizer = Localizer::new(scene.noise(), scene.tracker.rate_hz)?;
        localizer.add_body(rig::reference_body(), None)?;
        localizer.add_body(rig::grid_body(), None)?;
        localizer.add_body(rig::tool_body(), Some(tool_pose))?;

        let mut session = Self {
            grid: scene.grid_geometry(),
            phantom,
            plan,
            ref_pose,
            localizer,
            phase: Phase::Setup,
            views: Vec::new(),
            reports: Vec::new(),
            shots_taken: 0,
            exposure: ExposureLog::new(),
            navigation: None,
            grade: None,
            log: Vec::new(),
            sink: None,
            scene,
        };
        let created = PhaseChange {
            from: None,
            to: Phase::Setup,
            scene: Some(session.scene.clone()),
            navigation: None,
        };
        session.record(EventKind::PhaseChange, &created)?;
        Ok(session)
    }

    /// Like [`Session::create`], also appending every event to a JSONL file.
    pub fn create_logged(scene: Scene, log_path: &Path) -> Result<Self> {
        let mut session = Self::create(scene)?;
        let mut sink = BufWriter::new(File::create(log_path)?);
        for e in &session.log {
            writeln!(sink, "{}", e.to_json_line())?;
        }
        sink.flush()?;
        session.sink = Some(sink);
        Ok(session)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn views(&self) -> &[CalibratedView<f64>] {
        &self.views
    }

    pub fn reports(&self) -> &[CalibrationReport] {
        &self.reports
    }

    pub fn plan(&self) -> &PlannedTrajectory<f64> {
        &self.plan
    }

    pub fn navigation(&self) -> Option<&NavigationSession<f64>> {
        self.navigation.as_ref()
    }

    pub fn exposure_s(&self) -> f64 {
        self.exposure.total_s()
    }

    pub fn grade(&self) -> Option<&GradeReport> {
        self.grade.as_ref()
    }

    /// The whole log as JSONL.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&e.to_json_line());
            out.push('\n');
        }
        out
    }

    fn clock_ms(&self) -> u64 {
        self.localizer.timestamp_ms(self.localizer.next_frame_index())
    }

    fn record<P: Serialize>(&mut self, kind: EventKind, payload: &P) -> Result<()> {
        self.record_at(self.clock_ms(), kind, payload)
    }

    fn record_at<P: Serialize>(&mut self, timestamp_ms: u64, kind: EventKind, payload: &P) -> Result<()> {
        let event = EventRecord {
            seq: self.log.len() as u64,
            timestamp_ms,
            kind,
            payload: serde_json::to_value(payload).expect("payloads serialize"),
        };
        if let Some(sink) = self.sink.as_mut() {
            writeln!(sink, "{}", event.to_json_line())?;
            sink.flush()?;
        }
        self.log.push(event);
        Ok(())
    }

    fn change_phase(&mut self, to: Phase, navigation: Option<NavigationStart>) -> Result<()> {
        let change = PhaseChange {
            from: Some(self.phase),
            to,
            scene: None,
            navigation,
        };
        self.phase = to;
        self.record(EventKind::PhaseChange, &change)
    }

    pub fn attach_reference(&mut self) -> Result<()> {
        if self.phase != Phase::Setup {
            return Err(illegal(self.phase, "attach_reference", "reference is already attached"));
        }
        self.localizer
            .set_pose(rig::REFERENCE_ID, Some(self.ref_pose.clone()))?;
        self.change_phase(Phase::ReferenceAttached, None)
    }

    /// Takes a shot from the named C-arm pose. The first shot only calibrates;
    /// later shots become navigation views.
    pub fn take_shot(&mut self, label: &str) -> Result<CalibrationReport> {
        match self.phase {
            Phase::Setup => return Err(illegal(self.phase, "take_shot", "reference not attached")),
            Phase::Navigating | Phase::Done => {
                return Err(illegal(self.phase, "take_shot", "shots are taken before navigation starts"))
            }
            Phase::ReferenceAttached | Phase::Calibrated => {}
        }
        let spec = self
            .scene
            .c_arm_pose(label)
            .ok_or_else(|| ServiceError::SceneValidation {
                path: "c_arm_poses".into(),
                message: format!("no C-arm pose labelled `{label}`"),
            })?
            .clone();
        let (grid_in_patient, source) = self.scene.grid_in_patient(&spec);
        let c_arm = CArmState {
            grid_pose: compose(&self.ref_pose, &grid_in_patient)?,
            source_in_grid: source,
        };
        let index = self.shots_taken;
        self.shots_taken += 1;
        let kind = if index == 0 {
            ExposureKind::CalibrationShot
        } else {
            ExposureKind::NavShot
        };

        self.localizer.set_pose(rig::GRID_ID, Some(c_arm.grid_pose.clone()))?;
        let frame = self.localizer.capture();
        self.localizer.set_pose(rig::GRID_ID, None)?;

        let distortion = self.scene.distortion();
        let request = ShotRequest {
            c_arm: &c_arm,
            ref_pose: &self.ref_pose,
            grid: &self.grid,
            phantom: &self.phantom,
            distortion: &distortion,
            image_noise_px: self.scene.imaging.image_noise_px,
            kind,
            duration_s: self.scene.protocol.shot_duration_s,
            timestamp_ms: frame.timestamp_ms,
        };
        let mut rng = sim_rng(self.scene.seed, stream::IMAGE, index, 0);
        let shot = acquire_shot(&request, &mut rng, &mut self.exposure)?;

        let calibrated = (|| {
            let capture = ShotCapture {
                view_id: format!("view-{index}"),
                label: label.to_string(),
                observations: shot.observations.clone(),
                grid_pose: frame.pose(rig::GRID_ID)?.clone(),
                ref_pose: frame.pose(rig::REFERENCE_ID)?.clone(),
            };
            calibrate_shot(&capture, &self.grid, self.scene.imaging.dewarp_degree)
        })();

        let mut record = ShotRecord {
            label: label.to_string(),
            kind,
            exposure: shot.exposure,
            frame: frame.clone(),
            report: None,
            landmarks: shot.landmarks,
            empty: shot.empty,
            error: None,
        };
        match calibrated {
            Ok((view, report)) => {
                record.report = Some(report.clone());
                self.record_at(frame.timestamp_ms, EventKind::Shot, &record)?;
                if kind == ExposureKind::NavShot {
                    self.views.push(view);
                }
                self.reports.push(report.clone());
                if self.phase == Phase::ReferenceAttached {
                    self.change_phase(Phase::Calibrated, None)?;
                }
                Ok(report)
            }
            Err(e) => {
                record.error = Some(e.to_string());
                self.record_at(frame.timestamp_ms, EventKind::Shot, &record)?;
                Err(e.into())
            }
        }
    }

    pub fn start_navigation(&mut self) -> Result<NavigationStart> {
        if self.phase != Phase::Calibrated {
            return Err(illegal(self.phase, "start_navigation", "calibration has not been completed"));
        }
        if self.views.len() < 2 {
            return Err(illegal(
                self.phase,
                "start_navigation",
                format!("two navigation views are required, have {}", self.views.len()),
            ));
        }
        let session = NavigationSession::new(
            self.views.clone(),
            rig::tool_body(),
            rig::REFERENCE_ID,
            self.scene.navigation_config(),
        )?
        .with_target(self.plan.clone());
        let start = NavigationStart {
            views: self
                .views
                .iter()
                .map(|v| ViewSummary {
                    view_id: v.view_id.clone(),
                    label: v.label.clone(),
                })
                .collect(),
            target: self.plan.clone(),
            target_overlays: session.target_overlays().unwrap_or_default(),
        };
        self.navigation = Some(session);
        self.change_phase(Phase::Navigating, Some(start.clone()))?;
        Ok(start)
    }

    fn require_navigating(&self, action: &'static str) -> Result<&NavigationSession<f64>> {
        match (&self.navigation, self.phase) {
            (Some(n), Phase::Navigating) => Ok(n),
            _ => Err(illegal(self.phase, action, "navigation is not running")),
        }
    }

    /// Advances the tracker by one frame and renders the overlays.
    pub fn tick(&mut self) -> Result<FrameUpdate> {
        self.require_navigating("tick")?;
        let frame = self.localizer.capture();
        let nav = self.navigation.as_ref().expect("checked above");
        let overlays = nav.render_overlays(&frame).unwrap_or_else(|e| {
            nav.views
                .iter()
                .map(|v| ViewOverlay::Unavailable {
                    view_id: v.view_id.clone(),
                    reason: e.to_string(),
                })
                .collect()
        });
        let update = FrameUpdate { frame, overlays };
        self.record_at(update.frame.timestamp_ms, EventKind::Frame, &update)?;
        Ok(update)
    }

    pub fn steer(&mut self, command: SteerCommand<f64>) -> Result<SteerRecord> {
        self.require_navigating("steer")?;
        let tool = rig::tool_body();
        let pose = self
            .localizer
            .true_pose(rig::TOOL_ID)?
            .cloned()
            .expect("tool pose is always set");
        let out = steer(&tool, &pose, &self.ref_pose, &command, &self.scene.steer_limits())?;
        self.localizer.set_pose(rig::TOOL_ID, Some(out.pose))?;
        let record = SteerRecord {
            requested: command,
            applied: out.applied,
            clamped: out.clamped,
        };
        self.record(EventKind::Steer, &record)?;
        Ok(record)
    }

    /// Drives the screw along the true tool axis and grades the result.
    pub fn insert_and_grade(&mut self) -> Result<GradeReport> {
        self.require_navigating("insert_and_grade")?;
        let tool = rig::tool_body();
        let pose = self
            .localizer
            .true_pose(rig::TOOL_ID)?
            .cloned()
            .expect("tool pose is always set");
        let actual = tool_in_reference(&tool, &pose, &self.ref_pose)?.axis;
        let side = self.scene.tool.target_side;
        let pedicle = self.phantom.pedicle(side);
        let placement = ScrewPlacement::new(
            actual.clone(),
            self.scene.screw.radius_mm,
            self.scene.screw.insertion_depth_mm,
            pedicle.channel_length_mm,
        )?;
        let breach_mm = breach_depth(pedicle, &placement);
        let protocol = self.scene.protocol_constants();
        let conventional = protocol.conventional_log()?;
        let report = GradeReport {
            side,
            breach_mm,
            grade: grade(breach_mm),
            error: trajectory_error(&actual, &self.plan, false),
            exposure_s: self.exposure.total_s(),
            conventional_exposure_s: conventional.total_s(),
            exposure_ratio: exposure_compare(&self.exposure, &conventional)?,
            operative_time_virtual_min: protocol.operative_time_virtual_min,
            operative_time_conventional_min: protocol.operative_time_conventional_min,
        };
        self.record(EventKind::Report, &report)?;
        self.grade = Some(report.clone());
        self.change_phase(Phase::Done, None)?;
        Ok(report)
    }
}

/// Result of replaying a recorded log.
#[derive(Debug)]
pub struct ReplayOutcome {
    pub session: Session,
    pub events: usize,
}

fn parse_log(text: &str) -> Result<Vec<(String, EventRecord)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<EventRecord>(l)
                .map(|e| (l.to_string(), e))
                .map_err(|e| ServiceError::MalformedLog {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

fn payload<T: for<'de> Deserialize<'de>>(e: &EventRecord, line: usize) -> Result<T> {
    serde_json::from_value(e.payload.clone()).map_err(|err| ServiceError::MalformedLog {
        line,
        message: err.to_string(),
    })
}

/// Re-executes the commands implied by a recorded log and checks that the
/// regenerated log matches it byte for byte.
pub fn replay(text: &str) -> Result<ReplayOutcome> {
    let records = parse_log(text)?;
    let Some((_, first)) = records.first() else {
        return Err(ServiceError::MalformedLog {
            line: 1,
            message: "log is empty".into(),
        });
    };
    let created: PhaseChange = payload(first, 1)?;
    let scene = match (first.kind, created.scene) {
        (EventKind::PhaseChange, Some(scene)) => scene,
        _ => {
            return Err(ServiceError::MalformedLog {
                line: 1,
                message: "first record must carry the scene".into(),
            })
        }
    };
    let mut session = Session::create(scene).map_err(|e| match e {
        ServiceError::SceneValidation { path, message } => ServiceError::MalformedLog {
            line: 1,
            message: format!("scene invalid at `{path}`: {message}"),
        },
        other => other,
    })?;

    for (i, (_, record)) in records.iter().enumerate().skip(1) {
        let line = i + 1;
        // command failures are part of the recording and must recur
        let _ = match record.kind {
            EventKind::PhaseChange => {
                let change: PhaseChange = payload(record, line)?;
                match change.to {
                    Phase::ReferenceAttached => session.attach_reference(),
                    Phase::Navigating => session.start_navigation().map(|_| ()),
                    // produced as side effects of shots and reports
                    Phase::Calibrated | Phase::Done | Phase::Setup => Ok(()),
                }
            }
            EventKind::Shot => {
                let shot: ShotRecord = payload(record, line)?;
                session.take_shot(&shot.label).map(|_| ())
            }
            EventKind::Frame => session.tick().map(|_| ()),
            EventKind::Steer => {
                let steer: SteerRecord = payload(record, line)?;
                session.steer(steer.requested).map(|_| ())
            }
            EventKind::Report => session.insert_and_grade().map(|_| ()),
        };
        if session.log.len() > records.len() {
            return Err(ServiceError::ReplayDiverged { seq: records.len() as u64 });
        }
    }

    let regenerated = &session.log;
    for (i, (line, _)) in records.iter().enumerate() {
        match regenerated.get(i) {
            Some(e) if &e.to_json_line() == line => {}
            _ => return Err(ServiceError::ReplayDiverged { seq: i as u64 }),
        }
    }
    if regenerated.len() != records.len() {
        return Err(ServiceError::ReplayDiverged {
            seq: records.len() as u64,
        });
    }
    Ok(ReplayOutcome {
        events: records.len(),
        session,
    })
}
