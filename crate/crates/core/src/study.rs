//! Monte-Carlo comparison of navigated and conventional (blind) screw
//! insertion on the vertebra phantom.
//!
//! Guided trials run the full virtual fluoroscopy loop: three simulated shots
//! are calibrated, then a controller steers the tool using only tracker frames
//! and the overlays they produce, and finally the screw follows the true tool
//! axis. Blind trials draw entry and angle errors directly. Every trial owns a
//! counter-derived random stream, so reports are reproducible per seed.

use nalgebra::{Point3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_shot, triangulate, CalibratedView, ShotCapture};
use crate::distortion::DistortionParams;
use crate::geometry::{compose, FrameId, Ray3, RigidTransform};
use crate::navigation::{
    steer, trajectory_error, NavigationConfig, NavigationSession, PlannedTrajectory, SteerCommand, SteerLimits,
    TrajectoryError, ViewOverlay,
};
use crate::phantom::{
    acquire_shot, breach_depth, grade, rig, BreachGrade, CArmState, ExposureKind, ExposureLog, PediclePhantom,
    ProtocolConstants, ScrewPlacement, ShotRequest, Side,
};
use crate::tracking::{gaussian, sim_rng, stream, tool_in_reference, Localizer, NoiseModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidedArmConfig {
    /// Per-axis marker noise of the localizer, mm.
    pub tracker_sigma_mm: f64,
    /// Pixel noise on every imaged fiducial, px.
    pub image_sigma_px: f64,
    pub max_iterations: usize,
    /// Converged once the estimated tip is this close to the planned entry.
    pub entry_tolerance_mm: f64,
    pub angle_tolerance_deg: f64,
    /// Fraction of the estimated correction commanded per tick.
    pub gain: f64,
    /// Consecutive tracker frames averaged into one pose estimate.
    pub frames_per_estimate: usize,
    /// Spread of the initial hand placement around the plan.
    pub initial_entry_sigma_mm: f64,
    pub initial_angle_sigma_deg: f64,
    pub steer_limits: SteerLimits,
}

impl Default for GuidedArmConfig {
    fn default() -> Self {
        Self {
            tracker_sigma_mm: 0.25,
            image_sigma_px: 0.5,
            max_iterations: 200,
            entry_tolerance_mm: 0.3,
            angle_tolerance_deg: 0.3,
            gain: 0.8,
            frames_per_estimate: 8,
            initial_entry_sigma_mm: 3.0,
            initial_angle_sigma_deg: 5.0,
            steer_limits: SteerLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlindArmConfig {
    pub entry_sigma_mm: f64,
    pub angle_sigma_deg: f64,
}

impl Default for BlindArmConfig {
    /// Tuned so the blind arm breaches in roughly 13–15 % of trials on the
    /// default phantom and screw.
    fn default() -> Self {
        Self {
            entry_sigma_mm: 0.4,
            angle_sigma_deg: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSelection {
    pub guided: bool,
    pub blind: bool,
}

impl Default for ArmSelection {
    fn default() -> Self {
        Self {
            guided: true,
            blind: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub arms: ArmSelection,
    pub guided: GuidedArmConfig,
    pub blind: BlindArmConfig,
    pub protocol: ProtocolConstants,
    pub screw_radius_mm: f64,
    pub insertion_depth_mm: f64,
    pub dewarp_degree: usize,
    pub phantom: PediclePhantom,
    pub distortion: DistortionParams<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_trials: 1000,
            seed: 2024,
            arms: ArmSelection::default(),
            guided: GuidedArmConfig::default(),
            blind: BlindArmConfig::default(),
            protocol: ProtocolConstants::default(),
            screw_radius_mm: 2.0,
            insertion_depth_mm: 40.0,
            dewarp_degree: 4,
            phantom: PediclePhantom::lumbar(),
            distortion: rig::distortion(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::InvalidParameter("n_trials must be at least 1".into()));
        }
        if !self.arms.guided && !self.arms.blind {
            return Err(Error::InvalidParameter("select at least one arm".into()));
        }
        let g = &self.guided;
        for (name, v) in [
            ("guided.tracker_sigma_mm", g.tracker_sigma_mm),
            ("guided.image_sigma_px", g.image_sigma_px),
            ("guided.initial_entry_sigma_mm", g.initial_entry_sigma_mm),
            ("guided.initial_angle_sigma_deg", g.initial_angle_sigma_deg),
            ("blind.entry_sigma_mm", self.blind.entry_sigma_mm),
            ("blind.angle_sigma_deg", self.blind.angle_sigma_deg),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be a finite value >= 0")));
            }
        }
        if g.frames_per_estimate == 0 {
            return Err(Error::InvalidParameter("guided.frames_per_estimate must be at least 1".into()));
        }
        if !(g.gain > 0.0 && g.gain <= 1.0) {
            return Err(Error::InvalidParameter("guided.gain must lie in (0, 1]".into()));
        }
        self.phantom.validate()?;
        self.distortion.validate()?;
        let reach = self.phantom.left.channel_length_mm.min(self.phantom.right.channel_length_mm);
        if !(self.insertion_depth_mm > 0.0 && self.insertion_depth_mm <= reach) {
            return Err(Error::InvalidParameter(format!(
                "insertion depth must lie in (0, {reach}] mm"
            )));
        }
        if !(self.screw_radius_mm > 0.0) {
            return Err(Error::InvalidParameter("screw radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Guided,
    Blind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub arm: Arm,
    pub index: usize,
    pub side: Side,
    pub breach_mm: f64,
    pub grade: BreachGrade,
    pub converged: bool,
    pub iterations: usize,
    /// True final error against the plan.
    pub error: TrajectoryError,
    pub exposure_s: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeHistogram {
    pub contained: usize,
    pub minor: usize,
    pub major: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub trials: usize,
    pub breaches: usize,
    pub breach_rate: f64,
    /// Wilson score interval, 95 %.
    pub breach_ci95: [f64; 2],
    pub grades: GradeHistogram,
    pub non_converged: usize,
    pub mean_iterations: f64,
    pub mean_tip_offset_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureSummary {
    /// Mean radiation-on time per navigated procedure, s.
    pub virtual_total_s: f64,
    pub conventional_total_s: f64,
    pub ratio: f64,
}

/// Pass-through operative times; nothing here is simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperativeTime {
    pub virtual_min: f64,
    pub conventional_min: f64,
    pub simulated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub guided: Option<ArmSummary>,
    pub blind: Option<ArmSummary>,
    /// Guided 95 % upper bound below blind 95 % lower bound.
    pub guided_lower_at_95: Option<bool>,
    pub exposure: ExposureSummary,
    pub operative_time: OperativeTime,
    pub trials: Vec<TrialRecord>,
}

const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> [f64; 2] {
    if n == 0 {
        return [0.0, 1.0];
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    [(center - half).max(0.0), (center + half).min(1.0)]
}

fn side_for(index: usize) -> Side {
    if index.is_multiple_of(2) {
        Side::Left
    } else {
        Side::Right
    }
}

/// Unit vector perpendicular to `d`.
fn perpendicular(d: &Vector3<f64>) -> Vector3<f64> {
    let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    d.cross(&helper).normalize()
}

/// Direction tilted away from `d` by independent Gaussian angles (degrees)
/// about two perpendicular axes.
fn tilted<R: Rng + ?Sized>(rng: &mut R, d: &Unit<Vector3<f64>>, sigma_deg: f64) -> Unit<Vector3<f64>> {
    let u = perpendicular(d);
    let v = d.cross(&u);
    let a = gaussian(rng, sigma_deg).to_radians();
    let b = gaussian(rng, sigma_deg).to_radians();
    let rot = UnitQuaternion::from_scaled_axis(u * a + v * b);
    Unit::new_normalize(rot * d.into_inner())
}

fn lateral_offset<R: Rng + ?Sized>(rng: &mut R, d: &Unit<Vector3<f64>>, sigma_mm: f64) -> Vector3<f64> {
    let u = perpendicular(d);
    let v = d.cross(&u);
    u * gaussian(rng, sigma_mm) + v * gaussian(rng, sigma_mm)
}

fn plan_for(config: &StudyConfig, side: Side) -> PlannedTrajectory<f64> {
    PlannedTrajectory {
        axis: config.phantom.pedicle(side).axis.clone(),
        depth_mm: config.insertion_depth_mm,
    }
}

fn grade_placement(config: &StudyConfig, side: Side, axis: Ray3<f64>) -> Result<(f64, BreachGrade)> {
    let pedicle = config.phantom.pedicle(side);
    let placement = ScrewPlacement::new(
        axis,
        config.screw_radius_mm,
        config.insertion_depth_mm,
        pedicle.channel_length_mm,
    )?;
    let breach = breach_depth(pedicle, &placement);
    Ok((breach, grade(breach)))
}

/// Conventional insertion: the hand lands with Gaussian entry and angle error.
pub fn run_blind_trial(config: &StudyConfig, index: usize) -> Result<TrialRecord> {
    let side = side_for(index);
    let plan = plan_for(config, side);
    let mut rng = sim_rng(config.seed, stream::TRIAL, index as u64, 1);
    let dir = tilted(&mut rng, &plan.axis.direction, config.blind.angle_sigma_deg);
    let entry = plan.axis.origin + lateral_offset(&mut rng, &plan.axis.direction, config.blind.entry_sigma_mm);
    let axis = Ray3 {
        origin: entry,
        direction: dir,
    };
    let (breach_mm, grade) = grade_placement(config, side, axis.clone())?;
    Ok(TrialRecord {
        arm: Arm::Blind,
        index,
        side,
        breach_mm,
        grade,
        converged: true,
        iterations: 0,
        error: trajectory_error(&axis, &plan, false),
        exposure_s: config.protocol.conventional_run_s,
    })
}

/// Patient reference somewhere in the working volume of the localizer.
pub fn random_reference_pose<R: Rng + ?Sized>(rng: &mut R) -> RigidTransform<f64> {
    RigidTransform::new(
        rig::REFERENCE_ID,
        FrameId::TRACKER,
        UnitQuaternion::from_euler_angles(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-3.1..3.1),
        ),
        Vector3::new(
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
            rng.random_range(-1800.0..-1400.0),
        ),
    )
}

/// C-arm placed near a nominal grid pose, with positioning jitter and flex of
/// the source inside the grid frame.
pub fn jittered_c_arm<R: Rng + ?Sized>(
    rng: &mut R,
    nominal_grid_in_patient: &RigidTransform<f64>,
    ref_pose: &RigidTransform<f64>,
) -> Result<CArmState> {
    let wobble = UnitQuaternion::from_scaled_axis(Vector3::new(
        gaussian(rng, 2f64.to_radians()),
        gaussian(rng, 2f64.to_radians()),
        gaussian(rng, 2f64.to_radians()),
    ));
    let shift = Vector3::new(gaussian(rng, 3.0), gaussian(rng, 3.0), gaussian(rng, 3.0));
    let jitter = RigidTransform::new(rig::REFERENCE_ID, rig::REFERENCE_ID, wobble, shift);
    let grid_in_patient = compose(&jitter, nominal_grid_in_patient)?;
    let source_in_grid =
        rig::nominal_source() + Vector3::new(gaussian(rng, 2.0), gaussian(rng, 2.0), gaussian(rng, 5.0));
    Ok(CArmState {
        grid_pose: compose(ref_pose, &grid_in_patient)?,
        source_in_grid,
    })
}

fn initial_tool_pose<R: Rng + ?Sized>(
    rng: &mut R,
    plan: &PlannedTrajectory<f64>,
    ref_pose: &RigidTransform<f64>,
    guided: &GuidedArmConfig,
) -> Result<RigidTransform<f64>> {
    let dir = tilted(rng, &plan.axis.direction, guided.initial_angle_sigma_deg);
    let tip = plan.axis.origin
        + lateral_offset(rng, &plan.axis.direction, guided.initial_entry_sigma_mm)
        + plan.axis.direction.into_inner() * gaussian(rng, guided.initial_entry_sigma_mm);
    let spin = rng.random_range(-3.1..3.1);
    compose(ref_pose, &tool_in_patient(&tip, &dir, spin))
}

/// Tool → patient pose of the default drill guide with its tip at `tip`,
/// inserting along `dir`, rolled by `spin_rad` about its axis.
pub fn tool_in_patient(tip: &Point3<f64>, dir: &Unit<Vector3<f64>>, spin_rad: f64) -> RigidTransform<f64> {
    // tool body insertion axis is −z
    let align = UnitQuaternion::rotation_between(&-Vector3::z(), dir)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    let spin = UnitQuaternion::from_axis_angle(dir, spin_rad);
    RigidTransform::new(rig::TOOL_ID, rig::REFERENCE_ID, spin * align, tip.coords)
}

/// Tool tip and axis triangulated from the overlays of the first two usable
/// views, using the tip and the working-length end of the shaft.
pub fn estimate_from_overlays(
    session: &NavigationSession<f64>,
    overlays: &[ViewOverlay<f64>],
) -> Result<Ray3<f64>> {
    let shaft = session.config.axis_samples;
    let usable: Vec<(&CalibratedView<f64>, &crate::navigation::OverlaySegment<f64>)> = session
        .views
        .iter()
        .zip(overlays)
        .filter_map(|(v, o)| o.segment().filter(|s| !s.degenerate).map(|s| (v, s)))
        .take(2)
        .collect();
    if usable.len() < 2 {
        return Err(Error::InvalidParameter("fewer than two usable overlays".into()));
    }
    let views = [usable[0].0, usable[1].0];
    let tip = triangulate(&views, &[usable[0].1.tip_2d, usable[1].1.tip_2d])?;
    let back = triangulate(
        &views,
        &[usable[0].1.axis_points_2d[shaft], usable[1].1.axis_points_2d[shaft]],
    )?;
    Ray3::new(tip.point, tip.point - back.point)
}

/// Mean of several tool estimates (tips averaged, directions summed).
pub fn average_estimates(estimates: &[Ray3<f64>]) -> Result<Ray3<f64>> {
    if estimates.is_empty() {
        return Err(Error::InvalidParameter("no estimates to average".into()));
    }
    let n = estimates.len() as f64;
    let tip = estimates.iter().fold(Vector3::zeros(), |a, e| a + e.origin.coords) / n;
    let dir = estimates
        .iter()
        .fold(Vector3::zeros(), |a, e| a + e.direction.into_inner());
    Ray3::new(Point3::from(tip), dir)
}

/// Whether an estimate lies within the convergence tolerances of the plan.
pub fn on_plan(estimate: &Ray3<f64>, plan: &PlannedTrajectory<f64>, entry_tol_mm: f64, angle_tol_deg: f64) -> bool {
    let err = trajectory_error(estimate, plan, false);
    (plan.axis.origin - estimate.origin).norm() <= entry_tol_mm && err.angle_deg <= angle_tol_deg
}

/// Greedy correction: move the tip towards the planned entry and turn the
/// axis onto the planned direction, both scaled by `gain`.
pub fn corrective_command(estimate: &Ray3<f64>, plan: &PlannedTrajectory<f64>, gain: f64) -> SteerCommand<f64> {
    let to_entry = plan.axis.origin - estimate.origin;
    let err = trajectory_error(estimate, plan, false);
    let cross = estimate.direction.cross(&plan.axis.direction);
    let rotate = if cross.norm() > 0.0 {
        cross.normalize() * (err.angle_deg * gain)
    } else {
        Vector3::zeros()
    };
    SteerCommand {
        translate_mm: to_entry * gain,
        rotate_deg: rotate,
    }
}

/// Navigated insertion through the full calibrate-then-steer loop.
pub fn run_guided_trial(config: &StudyConfig, index: usize) -> Result<TrialRecord> {
    let side = side_for(index);
    let plan = plan_for(config, side);
    let g = &config.guided;
    let mut rng = sim_rng(config.seed, stream::TRIAL, index as u64, 0);

    let ref_pose = random_reference_pose(&mut rng);
    let noise = NoiseModel {
        marker_sigma_mm: g.tracker_sigma_mm,
        dropout_prob: 0.0,
        seed: config.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    };
    let mut localizer = Localizer::new(noise, 30)?;
    localizer.add_body(rig::reference_body(), Some(ref_pose.clone()))?;
    localizer.add_body(rig::grid_body(), None)?;
    let tool = rig::tool_body();
    localizer.add_body(tool.clone(), Some(initial_tool_pose(&mut rng, &plan, &ref_pose, g)?))?;

    let grid = rig::grid();
    let protocol = &config.protocol;
    let tilt = rng.random_range(-30.0..30.0);
    let shots = [
        ("calibration", ExposureKind::CalibrationShot, rig::oblique_grid_in_patient(tilt)),
        ("AP", ExposureKind::NavShot, rig::ap_grid_in_patient()),
        ("lateral", ExposureKind::NavShot, rig::lateral_grid_in_patient()),
    ];
    let mut log = ExposureLog::new();
    let mut views = Vec::new();
    for (k, (label, kind, nominal)) in shots.into_iter().enumerate() {
        let c_arm = jittered_c_arm(&mut rng, &nominal, &ref_pose)?;
        localizer.set_pose(rig::GRID_ID, Some(c_arm.grid_pose.clone()))?;
        let frame = localizer.capture();
        let request = ShotRequest {
            c_arm: &c_arm,
            ref_pose: &ref_pose,
            grid: &grid,
            phantom: &config.phantom,
            distortion: &config.distortion,
            image_noise_px: g.image_sigma_px,
            kind,
            duration_s: protocol.shot_duration_s,
            timestamp_ms: frame.timestamp_ms,
        };
        let mut image_rng = sim_rng(config.seed, stream::IMAGE, index as u64, k as u16);
        let shot = acquire_shot(&request, &mut image_rng, &mut log)?;
        let capture = ShotCapture {
            view_id: format!("view{k}"),
            label: label.to_string(),
            observations: shot.observations,
            grid_pose: frame.pose(rig::GRID_ID)?.clone(),
            ref_pose: frame.pose(rig::REFERENCE_ID)?.clone(),
        };
        let (view, _) = calibrate_shot(&capture, &grid, config.dewarp_degree)?;
        if kind == ExposureKind::NavShot {
            views.push(view);
        }
    }
    // the C-arm leaves the field once the shots are taken
    localizer.set_pose(rig::GRID_ID, None)?;

    let session = NavigationSession::new(views, tool.clone(), rig::REFERENCE_ID, NavigationConfig::default())?
        .with_target(plan.clone());

    let mut converged = false;
    let mut iterations = 0;
    while iterations < g.max_iterations {
        iterations += 1;
        let mut estimates = Vec::with_capacity(g.frames_per_estimate);
        for _ in 0..g.frames_per_estimate {
            let frame = localizer.capture();
            if let Ok(e) = session
                .render_overlays(&frame)
                .and_then(|o| estimate_from_overlays(&session, &o))
            {
                estimates.push(e);
            }
        }
        let Ok(estimate) = average_estimates(&estimates) else {
            continue;
        };
        if on_plan(&estimate, &plan, g.entry_tolerance_mm, g.angle_tolerance_deg) {
            converged = true;
            break;
        }
        let command = corrective_command(&estimate, &plan, g.gain);
        let tool_pose = localizer.true_pose(rig::TOOL_ID)?.cloned().ok_or(Error::BodyNotVisible {
            body: rig::TOOL_ID.into(),
            visible: 0,
        })?;
        let outcome = steer(&tool, &tool_pose, &ref_pose, &command, &g.steer_limits)?;
        localizer.set_pose(rig::TOOL_ID, Some(outcome.pose))?;
    }

    let tool_pose = localizer.true_pose(rig::TOOL_ID)?.cloned().expect("tool stays in view");
    let actual = tool_in_reference(&tool, &tool_pose, &ref_pose)?.axis;
    let (breach_mm, grade) = grade_placement(config, side, actual.clone())?;
    Ok(TrialRecord {
        arm: Arm::Guided,
        index,
        side,
        breach_mm,
        grade,
        converged,
        iterations,
        error: trajectory_error(&actual, &plan, false),
        exposure_s: log.total_s(),
    })
}

fn summarize(records: &[TrialRecord]) -> ArmSummary {
    let mut grades = GradeHistogram::default();
    for r in records {
        match r.grade {
            BreachGrade::Contained => grades.contained += 1,
            BreachGrade::Minor => grades.minor += 1,
            BreachGrade::Major => grades.major += 1,
        }
    }
    let n = records.len();
    let breaches = grades.minor + grades.major;
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    ArmSummary {
        trials: n,
        breaches,
        breach_rate: if n == 0 { 0.0 } else { breaches as f64 / n as f64 },
        breach_ci95: wilson_interval(breaches, n),
        grades,
        non_converged: records.iter().filter(|r| !r.converged).count(),
        mean_iterations: mean(&|r| r.iterations as f64),
        mean_tip_offset_mm: mean(&|r| r.error.tip_offset_mm),
    }
}

/// Runs every selected arm. Trials run in parallel; the report is assembled
/// in trial order.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let mut trials = Vec::new();
    let mut guided = None;
    let mut blind = None;
    if config.arms.guided {
        let records = (0..config.n_trials)
            .into_par_iter()
            .map(|i| run_guided_trial(config, i))
            .collect::<Result<Vec<_>>>()?;
        guided = Some(summarize(&records));
        trials.extend(records);
    }
    if config.arms.blind {
        let records = (0..config.n_trials)
            .into_par_iter()
            .map(|i| run_blind_trial(config, i))
            .collect::<Result<Vec<_>>>()?;
        blind = Some(summarize(&records));
        trials.extend(records);
    }

    let conventional = config.protocol.conventional_log()?;
    let virtual_total = match trials.iter().filter(|t| t.arm == Arm::Guided).count() {
        0 => config.protocol.virtual_log()?.total_s(),
        n => {
            trials
                .iter()
                .filter(|t| t.arm == Arm::Guided)
                .map(|t| t.exposure_s)
                .sum::<f64>()
                / n as f64
        }
    };
    let conventional_total = conventional.total_s();
    if conventional_total == 0.0 {
        return Err(Error::DivisionByZero("conventional exposure total"));
    }
    let guided_lower_at_95 = match (&guided, &blind) {
        (Some(g), Some(b)) => Some(g.breach_ci95[1] < b.breach_ci95[0]),
        _ => None,
    };
    Ok(StudyReport {
        config: config.clone(),
        guided,
        blind,
        guided_lower_at_95,
        exposure: ExposureSummary {
            virtual_total_s: virtual_total,
            conventional_total_s: conventional_total,
            ratio: virtual_total / conventional_total,
        },
        operative_time: OperativeTime {
            virtual_min: config.protocol.operative_time_virtual_min,
            conventional_min: config.protocol.operative_time_conventional_min,
            simulated: false,
        },
        trials,
    })
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study reports serialize")
    }

    /// One row per arm.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "arm,trials,breaches,breach_rate,ci95_low,ci95_high,contained,minor,major,non_converged,mean_iterations,mean_tip_offset_mm\n",
        );
        for (name, arm) in [("guided", &self.guided), ("blind", &self.blind)] {
            if let Some(a) = arm {
                out.push_str(&format!(
                    "{name},{},{},{:.6},{:.6},{:.6},{},{},{},{},{:.3},{:.4}\n",
                    a.trials,
                    a.breaches,
                    a.breach_rate,
                    a.breach_ci95[0],
                    a.breach_ci95[1],
                    a.grades.contained,
                    a.grades.minor,
                    a.grades.major,
                    a.non_converged,
                    a.mean_iterations,
                    a.mean_tip_offset_mm
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wilson_known_values() {
        // 10/100: Wilson interval [0.0552, 0.1744]
        let [lo, hi] = wilson_interval(10, 100);
        assert_relative_eq!(lo, 0.05523, epsilon = 1e-4);
        assert_relative_eq!(hi, 0.17437, epsilon = 1e-4);
        let [lo, hi] = wilson_interval(0, 50);
        assert!(lo.abs() < 1e-12);
        assert!(hi > 0.0 && hi < 0.1);
    }

    #[test]
    fn blind_arm_without_noise_never_breaches() {
        let mut c = StudyConfig {
            n_trials: 50,
            ..StudyConfig::default()
        };
        c.blind = BlindArmConfig {
            entry_sigma_mm: 0.0,
            angle_sigma_deg: 0.0,
        };
        c.arms.guided = false;
        let r = run_study(&c).unwrap();
        assert_eq!(r.blind.unwrap().breaches, 0);
    }

    #[test]
    fn config_validation() {
        let c = StudyConfig {
            n_trials: 0,
            ..StudyConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = StudyConfig::default();
        c.guided.gain = 0.0;
        assert!(c.validate().is_err());
        let c = StudyConfig {
            insertion_depth_mm: 100.0,
            ..StudyConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn guided_trial_converges_and_is_contained() {
        let c = StudyConfig::default();
        let r = run_guided_trial(&c, 3).unwrap();
        assert!(r.converged, "{r:?}");
        assert_relative_eq!(r.exposure_s, 3.5, epsilon = 1e-9);
    }
}
