//! Parametric vertebra phantom, synthetic X-ray shots, breach grading and
//! exposure accounting.
//!
//! Patient reference frame convention (patient prone): `x` towards the
//! patient's left, `y` cranial, `z` posterior. The reference frame sits on the
//! spinous process; the vertebral body lies at negative `z`.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{project_grid_point, CalibrationGridGeometry, DetectorGeometry};
use crate::distortion::{distort, DistortionParams, GridObservation, Plate};
use crate::geometry::{compose, Ray3, RigidTransform};
use crate::tracking::{gaussian, TrackedBody};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Bony channel modelled as a cylinder around `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pedicle {
    /// Origin is the entry point, direction points into the vertebral body.
    pub axis: Ray3<f64>,
    pub radius_mm: f64,
    pub channel_length_mm: f64,
}

impl Pedicle {
    pub fn entry_point(&self) -> Point3<f64> {
        self.axis.origin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PediclePhantom {
    pub left: Pedicle,
    pub right: Pedicle,
    /// Display points (patient frame) imaged in every shot.
    pub landmarks: Vec<Point3<f64>>,
}

impl PediclePhantom {
    /// Lumbar-like vertebra: pedicle entries 20 mm either side of the midline,
    /// 20 mm anterior to the reference, converging 10° medially.
    pub fn lumbar() -> Self {
        Self::symmetric(20.0, 20.0, 10.0, 3.5, 45.0)
    }

    pub fn symmetric(
        half_width_mm: f64,
        entry_depth_mm: f64,
        medial_angle_deg: f64,
        radius_mm: f64,
        channel_length_mm: f64,
    ) -> Self {
        let a = medial_angle_deg.to_radians();
        let pedicle = |sign: f64| Pedicle {
            axis: Ray3::new(
                Point3::new(sign * half_width_mm, 0.0, -entry_depth_mm),
                Vector3::new(-sign * a.sin(), 0.0, -a.cos()),
            )
            .expect("non-zero pedicle direction"),
            radius_mm,
            channel_length_mm,
        };
        let body_z = -entry_depth_mm - channel_length_mm * 0.8;
        let mut landmarks = vec![
            Point3::new(0.0, 0.0, -5.0),
            Point3::new(12.0, 0.0, -entry_depth_mm + 2.0),
            Point3::new(-12.0, 0.0, -entry_depth_mm + 2.0),
            Point3::new(35.0, 0.0, -entry_depth_mm - 5.0),
            Point3::new(-35.0, 0.0, -entry_depth_mm - 5.0),
            Point3::new(0.0, 0.0, body_z),
        ];
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for dz in [12.0, -12.0] {
                    landmarks.push(Point3::new(sx * 20.0, sy * 12.0, body_z + dz));
                }
            }
        }
        Self {
            left: pedicle(1.0),
            right: pedicle(-1.0),
            landmarks,
        }
    }

    pub fn pedicle(&self, side: Side) -> &Pedicle {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.left, &self.right] {
            if !(p.radius_mm > 0.0) || !(p.channel_length_mm > 0.0) {
                return Err(Error::InvalidParameter(
                    "pedicle radius and channel length must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrewPlacement {
    /// Origin at the insertion start, direction of insertion.
    pub axis: Ray3<f64>,
    pub screw_radius_mm: f64,
    pub insertion_depth_mm: f64,
}

impl ScrewPlacement {
    pub fn new(axis: Ray3<f64>, screw_radius_mm: f64, insertion_depth_mm: f64, channel_reach_mm: f64) -> Result<Self> {
        if !(screw_radius_mm > 0.0) {
            return Err(Error::InvalidParameter("screw radius must be positive".into()));
        }
        if !(insertion_depth_mm > 0.0) || insertion_depth_mm > channel_reach_mm {
            return Err(Error::InvalidParameter(format!(
                "insertion depth {insertion_depth_mm} mm must lie in (0, {channel_reach_mm}]"
            )));
        }
        Ok(Self {
            axis,
            screw_radius_mm,
            insertion_depth_mm,
        })
    }
}

/// Deepest cortical penetration of the screw surface, mm (0 when contained).
///
/// The distance from a point moving along a line to another line is convex in
/// the line parameter, so its maximum over the insertion interval is reached
/// at one of the two endpoints.
pub fn breach_depth(pedicle: &Pedicle, placement: &ScrewPlacement) -> f64 {
    let start = placement.axis.origin;
    let end = placement.axis.point_at(placement.insertion_depth_mm);
    let worst = pedicle
        .axis
        .line_distance(&start)
        .max(pedicle.axis.line_distance(&end));
    (worst + placement.screw_radius_mm - pedicle.radius_mm).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreachGrade {
    Contained,
    /// Penetration up to and including 2 mm.
    Minor,
    /// Penetration beyond 2 mm.
    Major,
}

pub const MINOR_BREACH_LIMIT_MM: f64 = 2.0;

pub fn grade(breach_mm: f64) -> BreachGrade {
    if breach_mm <= 0.0 {
        BreachGrade::Contained
    } else if breach_mm <= MINOR_BREACH_LIMIT_MM {
        BreachGrade::Minor
    } else {
        BreachGrade::Major
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureKind {
    CalibrationShot,
    NavShot,
    ContinuousRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureEvent {
    pub timestamp_ms: u64,
    pub duration_s: f64,
    pub kind: ExposureKind,
}

/// Radiation-on time, one event per shot or continuous run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExposureLog {
    events: Vec<ExposureEvent>,
}

impl ExposureLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, timestamp_ms: u64, duration_s: f64, kind: ExposureKind) -> Result<ExposureEvent> {
        if !(duration_s > 0.0) || !duration_s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "exposure duration must be positive, got {duration_s}"
            )));
        }
        let ev = ExposureEvent {
            timestamp_ms,
            duration_s,
            kind,
        };
        self.events.push(ev);
        Ok(ev)
    }

    pub fn events(&self) -> &[ExposureEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn total_s(&self) -> f64 {
        self.events.iter().map(|e| e.duration_s).sum()
    }
}

/// Ratio of virtual to conventional radiation-on time.
pub fn exposure_compare(virtual_log: &ExposureLog, conventional: &ExposureLog) -> Result<f64> {
    if virtual_log.is_empty() || conventional.is_empty() {
        return Err(Error::EmptyLog);
    }
    let denom = conventional.total_s();
    if denom == 0.0 {
        return Err(Error::DivisionByZero("conventional exposure total"));
    }
    Ok(virtual_log.total_s() / denom)
}

/// Protocol timing constants. Operative times are carried through reports
/// unchanged; they are not simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConstants {
    pub calibration_shots: u32,
    pub navigation_shots: u32,
    pub shot_duration_s: f64,
    pub conventional_run_s: f64,
    pub operative_time_virtual_min: f64,
    pub operative_time_conventional_min: f64,
}

impl Default for ProtocolConstants {
    /// One calibration shot and two navigation shots totalling 3.5 s, against
    /// 11.5 s of conventional fluoroscopy per procedure.
    fn default() -> Self {
        Self {
            calibration_shots: 1,
            navigation_shots: 2,
            shot_duration_s: 3.5 / 3.0,
            conventional_run_s: 11.5,
            operative_time_virtual_min: 11.9,
            operative_time_conventional_min: 10.0,
        }
    }
}

impl ProtocolConstants {
    pub fn virtual_log(&self) -> Result<ExposureLog> {
        let mut log = ExposureLog::new();
        for i in 0..self.calibration_shots {
            log.record(i as u64, self.shot_duration_s, ExposureKind::CalibrationShot)?;
        }
        for i in 0..self.navigation_shots {
            log.record((self.calibration_shots + i) as u64, self.shot_duration_s, ExposureKind::NavShot)?;
        }
        Ok(log)
    }

    pub fn conventional_log(&self) -> Result<ExposureLog> {
        let mut log = ExposureLog::new();
        log.record(0, self.conventional_run_s, ExposureKind::ContinuousRun)?;
        Ok(log)
    }
}

/// Physical C-arm state at a shot: where the grid is and where the X-ray
/// source really is (grid frame; it moves slightly with C-arm flex).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CArmState {
    /// Grid → tracker.
    pub grid_pose: RigidTransform<f64>,
    pub source_in_grid: Point3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkImage {
    pub index: usize,
    /// Distorted, noisy pixel position.
    pub image_px: Point2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub observations: Vec<GridObservation<f64>>,
    pub landmarks: Vec<LandmarkImage>,
    /// No phantom landmark fell inside the image disc.
    pub empty: bool,
    pub exposure: ExposureEvent,
}

pub struct ShotRequest<'a> {
    pub c_arm: &'a CArmState,
    /// Patient reference → tracker (true pose).
    pub ref_pose: &'a RigidTransform<f64>,
    pub grid: &'a CalibrationGridGeometry<f64>,
    pub phantom: &'a PediclePhantom,
    pub distortion: &'a DistortionParams<f64>,
    pub image_noise_px: f64,
    pub kind: ExposureKind,
    pub duration_s: f64,
    pub timestamp_ms: u64,
}

fn image_point<R: Rng + ?Sized>(
    q: &Point3<f64>,
    source: &Point3<f64>,
    detector: &DetectorGeometry<f64>,
    distortion: &DistortionParams<f64>,
    noise_px: f64,
    rng: &mut R,
) -> Option<Point2<f64>> {
    // draw noise first so the stream does not depend on visibility
    let jitter = Vector3::new(gaussian(rng, noise_px), gaussian(rng, noise_px), 0.0);
    let mm = project_grid_point(source, q).ok()?;
    let ideal = detector.mm_to_pixel(&mm);
    if (ideal - detector.principal_point_px).norm() > detector.image_radius_px {
        return None;
    }
    let warped = distort(&ideal, distortion).ok()?;
    Some(warped + jitter.xy())
}

/// Images the grid fiducials and phantom landmarks through the true source,
/// applies distortion and pixel noise, and logs one exposure event.
pub fn acquire_shot<R: Rng + ?Sized>(req: &ShotRequest<'_>, rng: &mut R, log: &mut ExposureLog) -> Result<Shot> {
    let source = &req.c_arm.source_in_grid;
    let detector = &req.grid.detector;
    let mut observations = Vec::new();
    let plates = [
        (Plate::Lower, &req.grid.lower_fiducials),
        (Plate::Upper, &req.grid.upper_fiducials),
    ];
    for (plate, fiducials) in plates {
        for f in fiducials.iter() {
            if let Some(px) = image_point(&f.position, source, detector, req.distortion, req.image_noise_px, rng) {
                observations.push(GridObservation {
                    plate,
                    fiducial_id: f.id,
                    image_point: px,
                    truth_3d: f.position,
                });
            }
        }
    }

    let ref_to_grid = compose(&req.c_arm.grid_pose.inverse(), req.ref_pose)?;
    let landmarks: Vec<LandmarkImage> = req
        .phantom
        .landmarks
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let q = ref_to_grid.apply_point(p);
            image_point(&q, source, detector, req.distortion, req.image_noise_px, rng)
                .map(|image_px| LandmarkImage { index, image_px })
        })
        .collect();

    let exposure = log.record(req.timestamp_ms, req.duration_s, req.kind)?;
    Ok(Shot {
        empty: landmarks.is_empty(),
        observations,
        landmarks,
        exposure,
    })
}

/// Default rig used by the simulator and the study.
pub mod rig {
    use super::*;

    pub const REFERENCE_ID: &str = "patient_ref";
    pub const TOOL_ID: &str = "tool";
    pub const GRID_ID: &str = "grid";

    /// Nominal source-to-detector distance, mm.
    pub const SOURCE_DISTANCE_MM: f64 = 1000.0;

    pub fn detector() -> DetectorGeometry<f64> {
        DetectorGeometry {
            pixel_pitch_mm: 0.11,
            principal_point_px: Point2::new(512.0, 512.0),
            image_radius_px: 450.0,
        }
    }

    pub fn grid_body() -> TrackedBody<f64> {
        TrackedBody::new(
            GRID_ID,
            vec![
                Point3::new(90.0, 90.0, 20.0),
                Point3::new(-90.0, 90.0, 60.0),
                Point3::new(-90.0, -90.0, 20.0),
                Point3::new(90.0, -90.0, 100.0),
            ],
        )
        .expect("grid markers are not collinear")
    }

    /// 11 × 11 lower lattice at 10 mm, 3 × 3 upper lattice at 22 mm, plates
    /// 200 mm apart.
    pub fn grid() -> CalibrationGridGeometry<f64> {
        CalibrationGridGeometry::lattice(11, 10.0, 3, 22.0, 200.0, grid_body(), detector())
    }

    pub fn reference_body() -> TrackedBody<f64> {
        TrackedBody::new(
            REFERENCE_ID,
            vec![
                Point3::new(0.0, 0.0, 60.0),
                Point3::new(50.0, 10.0, 70.0),
                Point3::new(-30.0, 40.0, 65.0),
                Point3::new(10.0, -45.0, 80.0),
            ],
        )
        .expect("reference markers are not collinear")
    }

    /// Drill guide: tip at the body origin, markers on the handle 150–200 mm
    /// behind it, insertion along −z.
    pub fn tool_body() -> TrackedBody<f64> {
        TrackedBody::new(
            TOOL_ID,
            vec![
                Point3::new(0.0, 40.0, 160.0),
                Point3::new(35.0, -20.0, 150.0),
                Point3::new(-35.0, -20.0, 170.0),
                Point3::new(0.0, 0.0, 200.0),
            ],
        )
        .expect("tool markers are not collinear")
        .with_tool(Vector3::zeros(), Vector3::new(0.0, 0.0, -1.0), 150.0)
        .expect("tool geometry is valid")
    }

    fn frame(x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>, origin: Vector3<f64>) -> RigidTransform<f64> {
        let m = Matrix3::from_columns(&[x, y, z]);
        RigidTransform::from_matrix(GRID_ID, REFERENCE_ID, &m, origin).expect("axes form a rotation")
    }

    /// Grid → patient for an antero-posterior shot: detector above the back,
    /// beam along the patient's z.
    pub fn ap_grid_in_patient() -> RigidTransform<f64> {
        frame(
            Vector3::x(),
            -Vector3::y(),
            -Vector3::z(),
            Vector3::new(0.0, 0.0, 260.0),
        )
    }

    /// Grid → patient for a lateral shot: detector on the patient's left.
    pub fn lateral_grid_in_patient() -> RigidTransform<f64> {
        frame(
            Vector3::y(),
            -Vector3::z(),
            -Vector3::x(),
            Vector3::new(300.0, 0.0, -40.0),
        )
    }

    /// AP view tilted about the cranial axis.
    pub fn oblique_grid_in_patient(tilt_deg: f64) -> RigidTransform<f64> {
        let ap = ap_grid_in_patient();
        let pivot = Vector3::new(0.0, 0.0, -40.0);
        let rot = nalgebra::UnitQuaternion::from_axis_angle(&Vector3::y_axis(), tilt_deg.to_radians());
        let about = RigidTransform::new(REFERENCE_ID, REFERENCE_ID, rot, pivot - rot * pivot);
        compose(&about, &ap).expect("frames chain")
    }

    pub fn nominal_source() -> Point3<f64> {
        Point3::new(0.0, 0.0, SOURCE_DISTANCE_MM)
    }

    pub fn distortion() -> DistortionParams<f64> {
        DistortionParams {
            k1: 1e-7,
            k2: 0.0,
            s_rot: 0.01,
            center: detector().principal_point_px,
            domain_radius: detector().image_radius_px,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{sim_rng, stream};
    use approx::assert_relative_eq;

    fn pedicle(radius: f64) -> Pedicle {
        Pedicle {
            axis: Ray3::new(Point3::origin(), -Vector3::z()).unwrap(),
            radius_mm: radius,
            channel_length_mm: 45.0,
        }
    }

    #[test]
    fn coaxial_screw_is_contained() {
        let p = pedicle(4.0);
        let s = ScrewPlacement::new(p.axis.clone(), 2.0, 40.0, 45.0).unwrap();
        assert_eq!(breach_depth(&p, &s), 0.0);
    }

    #[test]
    fn parallel_offset_breach() {
        let p = pedicle(4.0);
        let axis = Ray3::new(Point3::new(5.0, 0.0, 0.0), -Vector3::z()).unwrap();
        let s = ScrewPlacement::new(axis, 2.0, 40.0, 45.0).unwrap();
        assert_relative_eq!(breach_depth(&p, &s), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn grades_follow_thresholds() {
        assert_eq!(grade(0.0), BreachGrade::Contained);
        assert_eq!(grade(1.9), BreachGrade::Minor);
        assert_eq!(grade(2.0), BreachGrade::Minor);
        assert_eq!(grade(2.5), BreachGrade::Major);
    }

    #[test]
    fn placement_validation() {
        let axis = Ray3::new(Point3::origin(), -Vector3::z()).unwrap();
        assert!(ScrewPlacement::new(axis.clone(), 0.0, 40.0, 45.0).is_err());
        assert!(ScrewPlacement::new(axis, 2.0, 50.0, 45.0).is_err());
    }

    #[test]
    fn exposure_paper_protocol_ratio() {
        let mut v = ExposureLog::new();
        v.record(0, 3.5, ExposureKind::NavShot).unwrap();
        let mut c = ExposureLog::new();
        c.record(0, 11.5, ExposureKind::ContinuousRun).unwrap();
        assert_relative_eq!(exposure_compare(&v, &c).unwrap(), 3.5 / 11.5, epsilon = 1e-15);
        assert_relative_eq!(exposure_compare(&v, &c).unwrap(), 0.304, epsilon = 5e-4);
        assert_eq!(exposure_compare(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn exposure_k_shots_against_run() {
        let mut v = ExposureLog::new();
        for i in 0..4 {
            v.record(i, 0.8, ExposureKind::NavShot).unwrap();
        }
        let mut c = ExposureLog::new();
        c.record(0, 16.0, ExposureKind::ContinuousRun).unwrap();
        assert_relative_eq!(exposure_compare(&v, &c).unwrap(), 4.0 * 0.8 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn exposure_errors() {
        let empty = ExposureLog::new();
        let mut one = ExposureLog::new();
        one.record(0, 1.0, ExposureKind::NavShot).unwrap();
        assert_eq!(exposure_compare(&empty, &one), Err(Error::EmptyLog));
        assert!(one.record(1, 0.0, ExposureKind::NavShot).is_err());
        assert!(one.record(1, -1.0, ExposureKind::NavShot).is_err());
    }

    #[test]
    fn protocol_shot_duration_splits_total() {
        let p = ProtocolConstants::default();
        assert_relative_eq!(p.shot_duration_s, 1.1667, epsilon = 1e-4);
        assert_relative_eq!(p.virtual_log().unwrap().total_s(), 3.5, epsilon = 1e-12);
        assert_eq!(p.virtual_log().unwrap().events().len(), 3);
    }

    fn shot_with(noise: f64, distortion: DistortionParams<f64>, log: &mut ExposureLog) -> Shot {
        let grid = rig::grid();
        let ref_pose = RigidTransform::identity(rig::REFERENCE_ID, "tracker");
        let grid_pose = compose(&ref_pose, &rig::ap_grid_in_patient()).unwrap();
        let c_arm = CArmState {
            grid_pose,
            source_in_grid: rig::nominal_source(),
        };
        let phantom = PediclePhantom::lumbar();
        let req = ShotRequest {
            c_arm: &c_arm,
            ref_pose: &ref_pose,
            grid: &grid,
            phantom: &phantom,
            distortion: &distortion,
            image_noise_px: noise,
            kind: ExposureKind::NavShot,
            duration_s: 1.0,
            timestamp_ms: 0,
        };
        let mut rng = sim_rng(3, stream::IMAGE, 0, 0);
        acquire_shot(&req, &mut rng, log).unwrap()
    }

    #[test]
    fn clean_shot_matches_ideal_projection() {
        let mut log = ExposureLog::new();
        let none = DistortionParams::none(rig::detector().principal_point_px, 450.0);
        let shot = shot_with(0.0, none, &mut log);
        let det = rig::detector();
        for o in &shot.observations {
            let mm = project_grid_point(&rig::nominal_source(), &o.truth_3d).unwrap();
            assert_relative_eq!(o.image_point, det.mm_to_pixel(&mm), epsilon = 1e-9);
        }
        assert!(!shot.empty);
        assert_eq!(log.events().len(), 1);
    }

    #[test]
    fn each_shot_logs_one_event() {
        let mut log = ExposureLog::new();
        shot_with(0.3, rig::distortion(), &mut log);
        shot_with(0.3, rig::distortion(), &mut log);
        assert_eq!(log.events().len(), 2);
    }

    #[test]
    fn rig_frames_are_proper() {
        for t in [
            rig::ap_grid_in_patient(),
            rig::lateral_grid_in_patient(),
            rig::oblique_grid_in_patient(20.0),
        ] {
            assert_relative_eq!(t.rotation_matrix().determinant(), 1.0, epsilon = 1e-12);
        }
        rig::grid().validate().unwrap();
        rig::distortion().validate().unwrap();
    }
}
