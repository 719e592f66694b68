//! Two-plate grid calibration: X-ray source estimation from the upper plate,
//! calibrated views, projection of patient-frame points and triangulation.
//!
//! The detector is the plane `z = 0` of the grid frame, which is also the
//! lower plate. The X-ray source lies on the `+z` side, beyond the upper plate.

use std::collections::HashMap;

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::distortion::{self, DewarpConfig, DewarpModel, GridObservation, Plate};
use crate::geometry::{compose, nearest_point_to_lines, FrameId, Ray3, RigidTransform};
use crate::tracking::TrackedBody;
use crate::{Error, Real, Result};

/// Pixel ↔ detector-plane millimetre mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DetectorGeometry<T: Real> {
    pub pixel_pitch_mm: T,
    /// Pixel position of the grid origin.
    pub principal_point_px: Point2<T>,
    /// Radius of the imaged disc, px.
    pub image_radius_px: T,
}

impl<T: Real> DetectorGeometry<T> {
    pub fn pixel_to_mm(&self, px: &Point2<T>) -> Point2<T> {
        Point2::from((px - self.principal_point_px) * self.pixel_pitch_mm)
    }

    pub fn mm_to_pixel(&self, mm: &Point2<T>) -> Point2<T> {
        self.principal_point_px + mm.coords / self.pixel_pitch_mm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Fiducial<T: Real> {
    pub id: u32,
    /// Position in the grid frame, mm.
    pub position: Point3<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CalibrationGridGeometry<T: Real> {
    pub lower_fiducials: Vec<Fiducial<T>>,
    pub upper_fiducials: Vec<Fiducial<T>>,
    pub plate_separation_mm: T,
    /// Passive marker body fixed to the grid; its frame is the grid frame.
    pub marker_body: TrackedBody<T>,
    pub detector: DetectorGeometry<T>,
}

impl<T: Real> CalibrationGridGeometry<T> {
    /// Square lower lattice (`n × n`, `spacing` mm) at `z = 0` and a square
    /// upper lattice (`m × m`, `upper_spacing` mm) at `z = separation`.
    /// Lower ids start at 0, upper ids at 1000.
    pub fn lattice(
        n: usize,
        spacing: T,
        m: usize,
        upper_spacing: T,
        separation: T,
        marker_body: TrackedBody<T>,
        detector: DetectorGeometry<T>,
    ) -> Self {
        let square = |count: usize, step: T, z: T, first_id: u32| {
            let half = T::lit((count as f64 - 1.0) / 2.0);
            let mut out = Vec::with_capacity(count * count);
            for iy in 0..count {
                for ix in 0..count {
                    out.push(Fiducial {
                        id: first_id + (iy * count + ix) as u32,
                        position: Point3::new(
                            (T::lit(ix as f64) - half) * step,
                            (T::lit(iy as f64) - half) * step,
                            z,
                        ),
                    });
                }
            }
            out
        };
        Self {
            lower_fiducials: square(n, spacing, T::zero(), 0),
            upper_fiducials: square(m, upper_spacing, separation, 1000),
            plate_separation_mm: separation,
            marker_body,
            detector,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.plate_separation_mm > T::zero()) {
            return Err(Error::InvalidParameter("plate separation must be positive".into()));
        }
        let eps = T::lit(1e-9);
        if self.lower_fiducials.iter().any(|f| f.position.z.abs() > eps) {
            return Err(Error::InvalidParameter("lower fiducials must lie on z = 0".into()));
        }
        if self
            .upper_fiducials
            .iter()
            .any(|f| (f.position.z - self.plate_separation_mm).abs() > eps)
        {
            return Err(Error::InvalidParameter(
                "upper fiducials must lie on z = plate separation".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for f in self.lower_fiducials.iter().chain(&self.upper_fiducials) {
            if !seen.insert(f.id) {
                return Err(Error::InvalidParameter(format!("duplicate fiducial id {}", f.id)));
            }
        }
        if !(self.detector.pixel_pitch_mm > T::zero()) {
            return Err(Error::InvalidParameter("pixel pitch must be positive".into()));
        }
        self.marker_body.validate()
    }

    pub fn fiducial(&self, id: u32) -> Option<&Fiducial<T>> {
        self.lower_fiducials
            .iter()
            .chain(&self.upper_fiducials)
            .find(|f| f.id == id)
    }
}

/// A dewarped upper-plate fiducial on the detector plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DetectorPoint<T: Real> {
    pub fiducial_id: u32,
    pub detector_mm: Point2<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SourceEstimate<T: Real> {
    /// Source position in the grid frame, mm.
    pub source: Point3<T>,
    /// RMS distance from the source to the back-projection lines, mm.
    pub residual: T,
    pub fiducials_used: usize,
    /// Set when fewer than the recommended number of fiducials were used.
    pub few_fiducials: bool,
}

/// Least-squares point closest to the lines joining each upper fiducial to
/// its image on the detector plane.
pub fn estimate_source<T: Real>(
    upper_obs: &[DetectorPoint<T>],
    grid: &CalibrationGridGeometry<T>,
) -> Result<SourceEstimate<T>> {
    estimate_source_with(upper_obs, grid, &Tolerances::DEFAULT)
}

pub fn estimate_source_with<T: Real>(
    upper_obs: &[DetectorPoint<T>],
    grid: &CalibrationGridGeometry<T>,
    tol: &Tolerances,
) -> Result<SourceEstimate<T>> {
    if upper_obs.len() < 2 {
        return Err(Error::InsufficientFiducials {
            got: upper_obs.len(),
            required: 2,
        });
    }
    let upper: HashMap<u32, Point3<T>> =
        grid.upper_fiducials.iter().map(|f| (f.id, f.position)).collect();
    let lines = upper_obs
        .iter()
        .map(|o| {
            let fid = upper.get(&o.fiducial_id).ok_or(Error::UnknownFiducial(o.fiducial_id))?;
            let on_detector = Point3::new(o.detector_mm.x, o.detector_mm.y, T::zero());
            Ray3::through(on_detector, *fid)
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = nearest_point_to_lines(&lines, tol.max_bundle_condition)?;
    if !(fit.point.z > grid.plate_separation_mm) {
        return Err(Error::DegenerateGeometry(format!(
            "estimated source z = {:.3} mm is not beyond the upper plate",
            fit.point.z.as_f64()
        )));
    }
    Ok(SourceEstimate {
        source: fit.point,
        residual: fit.rms_distance,
        fiducials_used: lines.len(),
        few_fiducials: lines.len() < tol.recommended_upper_fiducials,
    })
}

/// A calibrated shot frozen at acquisition time.
///
/// Everything needed to project into the view is stored here; later motion
/// of the C-arm does not affect it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CalibratedView<T: Real> {
    pub view_id: String,
    /// Free-form label, e.g. `AP` or `lateral`.
    pub label: String,
    pub dewarp: DewarpModel<T>,
    /// Source position in the grid frame, mm.
    pub source: Point3<T>,
    pub source_residual_mm: T,
    pub detector: DetectorGeometry<T>,
    pub plate_separation_mm: T,
    /// Grid frame → patient reference frame at shot time.
    pub grid_to_ref: RigidTransform<T>,
}

impl<T: Real> CalibratedView<T> {
    pub fn new(
        view_id: impl Into<String>,
        label: impl Into<String>,
        dewarp: DewarpModel<T>,
        source: SourceEstimate<T>,
        detector: DetectorGeometry<T>,
        plate_separation_mm: T,
        grid_to_ref: RigidTransform<T>,
    ) -> Result<Self> {
        if !(source.source.z > plate_separation_mm) {
            return Err(Error::InvalidParameter("source must lie beyond the upper plate".into()));
        }
        if grid_to_ref.to_frame().as_str() != FrameId::PATIENT_REF {
            return Err(Error::FrameChain {
                expected: FrameId::PATIENT_REF.into(),
                found: grid_to_ref.to_frame().to_string(),
            });
        }
        Ok(Self {
            view_id: view_id.into(),
            label: label.into(),
            dewarp,
            source: source.source,
            source_residual_mm: source.residual,
            detector,
            plate_separation_mm,
            grid_to_ref,
        })
    }

    /// Source position expressed in the patient reference frame.
    pub fn source_in_ref(&self) -> Point3<T> {
        self.grid_to_ref.apply_point(&self.source)
    }

    /// Whether a detector point lies inside the calibrated disc.
    pub fn in_calibrated_disc(&self, detector_mm: &Point2<T>) -> bool {
        self.dewarp.contains(&self.detector.mm_to_pixel(detector_mm))
    }

    /// Back-projection line of a detector point, in the patient frame,
    /// pointing from the source towards the detector.
    pub fn back_project(&self, detector_mm: &Point2<T>) -> Result<Ray3<T>> {
        let d = Point3::new(detector_mm.x, detector_mm.y, T::zero());
        Ray3::through(self.source_in_ref(), self.grid_to_ref.apply_point(&d))
    }
}

/// Central projection of a patient-frame point onto the view's detector, mm.
pub fn project<T: Real>(view: &CalibratedView<T>, p: &Point3<T>) -> Result<Point2<T>> {
    let q = view.grid_to_ref.inverse().apply_point(p);
    project_grid_point(&view.source, &q)
}

/// Projection of a grid-frame point through `source` onto `z = 0`.
pub fn project_grid_point<T: Real>(source: &Point3<T>, q: &Point3<T>) -> Result<Point2<T>> {
    let along = q - source;
    let len = along.norm();
    if len <= T::lit(Tolerances::DEFAULT.coincident_mm) {
        return Err(Error::ProjectionAtInfinity);
    }
    let denom = source.z - q.z;
    if denom.abs() <= len * T::lit(1e-12) {
        return Err(Error::ProjectionAtInfinity);
    }
    let t = source.z / denom;
    if t < T::zero() {
        return Err(Error::BehindSource);
    }
    let hit = source + along * t;
    Ok(Point2::new(hit.x, hit.y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation<T: Real> {
    /// Point in the patient frame, mm.
    pub point: Point3<T>,
    /// RMS distance from `point` to the back-projection lines, mm.
    pub gap: T,
}

/// Least-squares intersection of the back-projection lines of one detector
/// point per view.
pub fn triangulate<T: Real>(views: &[&CalibratedView<T>], detector_points: &[Point2<T>]) -> Result<Triangulation<T>> {
    if views.len() != detector_points.len() {
        return Err(Error::InvalidParameter(format!(
            "{} views but {} image points",
            views.len(),
            detector_points.len()
        )));
    }
    if views.len() < 2 {
        return Err(Error::InvalidParameter("triangulation needs at least two views".into()));
    }
    let rays = views
        .iter()
        .zip(detector_points)
        .map(|(v, d)| v.back_project(d))
        .collect::<Result<Vec<_>>>()?;
    let fit = nearest_point_to_lines(&rays, Tolerances::DEFAULT.max_bundle_condition)?;
    Ok(Triangulation {
        point: fit.point,
        gap: fit.rms_distance,
    })
}

/// Per-shot calibration summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub view_id: String,
    pub label: String,
    pub dewarp_degree: usize,
    pub dewarp_fit_rms_px: f64,
    pub dewarp_domain_px: f64,
    pub lower_fiducials_used: usize,
    pub source_mm: [f64; 3],
    pub source_residual_mm: f64,
    pub upper_fiducials_used: usize,
    /// Upper fiducials whose image fell outside the calibrated disc.
    pub upper_fiducials_dropped: usize,
    pub few_fiducials: bool,
}

/// Raw grid observations of one shot together with the tracker poses
/// captured at the same instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ShotCapture<T: Real> {
    pub view_id: String,
    pub label: String,
    pub observations: Vec<GridObservation<T>>,
    /// Grid body → tracker.
    pub grid_pose: RigidTransform<T>,
    /// Patient reference → tracker.
    pub ref_pose: RigidTransform<T>,
}

/// Dewarps the shot from its lower plate, locates the source from its upper
/// plate and freezes the grid → patient transform.
pub fn calibrate_shot<T: Real>(
    shot: &ShotCapture<T>,
    grid: &CalibrationGridGeometry<T>,
    degree: usize,
) -> Result<(CalibratedView<T>, CalibrationReport)> {
    let detector = grid.detector;
    let config = DewarpConfig {
        degree,
        center: detector.principal_point_px,
        image_radius: detector.image_radius_px,
    };
    let dewarp = distortion::fit_dewarp(
        &shot.observations,
        |o| Ok(detector.mm_to_pixel(&Point2::new(o.truth_3d.x, o.truth_3d.y))),
        &config,
    )?;
    let lower_used = shot.observations.iter().filter(|o| o.plate == Plate::Lower).count();

    let mut upper = Vec::new();
    let mut dropped = 0;
    for o in shot.observations.iter().filter(|o| o.plate == Plate::Upper) {
        match distortion::dewarp(&o.image_point, &dewarp) {
            Ok(ideal) => upper.push(DetectorPoint {
                fiducial_id: o.fiducial_id,
                detector_mm: detector.pixel_to_mm(&ideal),
            }),
            Err(Error::Domain { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let source = estimate_source(&upper, grid)?;

    let grid_frame = shot.grid_pose.from_frame().clone();
    let ref_inv = shot.ref_pose.inverse();
    let grid_to_ref = compose(&ref_inv, &shot.grid_pose)?;
    debug_assert_eq!(grid_to_ref.from_frame(), &grid_frame);

    let report = CalibrationReport {
        view_id: shot.view_id.clone(),
        label: shot.label.clone(),
        dewarp_degree: degree,
        dewarp_fit_rms_px: dewarp.fit_rms.as_f64(),
        dewarp_domain_px: dewarp.domain_radius.as_f64(),
        lower_fiducials_used: lower_used,
        source_mm: [
            source.source.x.as_f64(),
            source.source.y.as_f64(),
            source.source.z.as_f64(),
        ],
        source_residual_mm: source.residual.as_f64(),
        upper_fiducials_used: source.fiducials_used,
        upper_fiducials_dropped: dropped,
        few_fiducials: source.few_fiducials,
    };
    let view = CalibratedView::new(
        shot.view_id.clone(),
        shot.label.clone(),
        dewarp,
        source,
        detector,
        grid.plate_separation_mm,
        grid_to_ref,
    )?;
    Ok((view, report))
}
