//! Live tool overlays in stored calibrated views.
//!
//! Navigation only ever sees [`CalibratedView`]s and [`TrackerFrame`]s. It has
//! no access to image acquisition, so overlays are always drawn on the shots
//! taken earlier.

use nalgebra::{Point2, Point3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{project, CalibratedView};
use crate::config::Tolerances;
use crate::geometry::{compose, rotation_from_degrees, Ray3, RigidTransform};
use crate::tracking::{tool_in_reference, tool_tip_and_axis, TrackedBody, TrackerFrame};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavigationConfig {
    /// Samples along the shaft behind the tip.
    pub axis_samples: usize,
    /// Virtual trajectory drawn ahead of the tip, mm.
    pub extension_mm: f64,
}

impl Default for NavigationConfig {
    fn default() -> Self {
        Self {
            axis_samples: 5,
            extension_mm: 50.0,
        }
    }
}

/// Planned screw path in the patient reference frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PlannedTrajectory<T: Real> {
    /// Entry point and insertion direction.
    pub axis: Ray3<T>,
    pub depth_mm: T,
}

impl<T: Real> PlannedTrajectory<T> {
    pub fn end_point(&self) -> Point3<T> {
        self.axis.point_at(self.depth_mm)
    }
}

/// Projected tool in one view, detector millimetres.
///
/// `axis_points_2d[0]` is the tip, the next `axis_samples` points walk back
/// along the shaft to the working length, and the last point is the end of
/// the forward extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct OverlaySegment<T: Real> {
    pub view_id: String,
    pub tip_2d: Point2<T>,
    pub axis_points_2d: Vec<Point2<T>>,
    /// Some sample falls outside the calibrated disc.
    pub clipped: bool,
    /// The axis passes through the source and images as a single point.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case", bound = "T: Real")]
pub enum ViewOverlay<T: Real> {
    Segment(OverlaySegment<T>),
    Unavailable { view_id: String, reason: String },
}

impl<T: Real> ViewOverlay<T> {
    pub fn view_id(&self) -> &str {
        match self {
            ViewOverlay::Segment(s) => &s.view_id,
            ViewOverlay::Unavailable { view_id, .. } => view_id,
        }
    }

    pub fn segment(&self) -> Option<&OverlaySegment<T>> {
        match self {
            ViewOverlay::Segment(s) => Some(s),
            ViewOverlay::Unavailable { .. } => None,
        }
    }
}

/// Projects an ordered set of patient-frame points into one view.
pub fn overlay_points<T: Real>(view: &CalibratedView<T>, points: &[Point3<T>]) -> ViewOverlay<T> {
    let projected: Result<Vec<Point2<T>>> = points.iter().map(|p| project(view, p)).collect();
    match projected {
        Ok(pts) => {
            let clipped = pts.iter().any(|p| !view.in_calibrated_disc(p));
            let extent = pts
                .iter()
                .map(|p| (p - pts[0]).norm())
                .fold(T::zero(), |a, b| a.max(b));
            ViewOverlay::Segment(OverlaySegment {
                view_id: view.view_id.clone(),
                tip_2d: pts[0],
                degenerate: extent <= T::lit(Tolerances::DEFAULT.degenerate_overlay_mm),
                axis_points_2d: pts,
                clipped,
            })
        }
        Err(e) => ViewOverlay::Unavailable {
            view_id: view.view_id.clone(),
            reason: e.to_string(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NavigationSession<T: Real> {
    pub views: Vec<CalibratedView<T>>,
    pub active_tool: TrackedBody<T>,
    pub reference_id: String,
    pub target: Option<PlannedTrajectory<T>>,
    pub config: NavigationConfig,
}

impl<T: Real> NavigationSession<T> {
    pub fn new(
        views: Vec<CalibratedView<T>>,
        active_tool: TrackedBody<T>,
        reference_id: impl Into<String>,
        config: NavigationConfig,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidParameter("navigation needs at least one view".into()));
        }
        let reference_id = reference_id.into();
        if let Some(v) = views
            .iter()
            .find(|v| v.grid_to_ref.to_frame().as_str() != reference_id)
        {
            return Err(Error::FrameChain {
                expected: reference_id,
                found: v.grid_to_ref.to_frame().to_string(),
            });
        }
        if active_tool.tool.is_none() {
            return Err(Error::InvalidParameter(format!(
                "body `{}` has no tool geometry",
                active_tool.body_id
            )));
        }
        Ok(Self {
            views,
            active_tool,
            reference_id,
            target: None,
            config,
        })
    }

    pub fn with_target(mut self, target: PlannedTrajectory<T>) -> Self {
        self.target = Some(target);
        self
    }

    /// Tip, shaft samples and forward extension, in the patient frame.
    pub fn tool_samples(&self, tip: &Point3<T>, axis: &Unit<Vector3<T>>) -> Vec<Point3<T>> {
        let length = self
            .active_tool
            .tool
            .as_ref()
            .map(|g| g.working_length)
            .unwrap_or_else(T::zero);
        let n = self.config.axis_samples;
        let mut pts = Vec::with_capacity(n + 2);
        pts.push(*tip);
        for k in 1..=n {
            let lambda = length * T::lit(k as f64 / n as f64);
            pts.push(tip - axis.into_inner() * lambda);
        }
        pts.push(tip + axis.into_inner() * T::lit(self.config.extension_mm));
        pts
    }

    /// Overlays for every view, in view order. A view whose projection fails
    /// is reported as unavailable without affecting the others.
    pub fn render_overlays(&self, frame: &TrackerFrame<T>) -> Result<Vec<ViewOverlay<T>>> {
        let pose = tool_tip_and_axis(frame, &self.active_tool, &self.reference_id)?;
        let samples = self.tool_samples(&pose.tip, &pose.axis.direction);
        Ok(self
            .views
            .par_iter()
            .map(|v| overlay_points(v, &samples))
            .collect())
    }

    /// Overlay of the planned trajectory (entry, then planned end point).
    pub fn target_overlays(&self) -> Option<Vec<ViewOverlay<T>>> {
        let target = self.target.as_ref()?;
        let pts = [target.axis.origin, target.end_point()];
        Some(self.views.iter().map(|v| overlay_points(v, &pts)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryError {
    pub angle_deg: f64,
    /// Distance from the planned entry to the actual axis line, mm.
    pub entry_offset_mm: f64,
    /// Distance between actual and planned points at the planned depth, mm.
    pub tip_offset_mm: f64,
}

/// Deviation of an actual tool ray (origin at the tip) from a plan.
pub fn trajectory_error<T: Real>(
    actual: &Ray3<T>,
    target: &PlannedTrajectory<T>,
    orientation_agnostic: bool,
) -> TrajectoryError {
    let da = actual.direction.into_inner();
    let dt = target.axis.direction.into_inner();
    let mut cos = da.dot(&dt);
    if orientation_agnostic {
        cos = cos.abs();
    }
    let angle = da.cross(&dt).norm().atan2(cos);
    let entry = actual.line_distance(&target.axis.origin);
    let tip = (actual.point_at(target.depth_mm) - target.end_point()).norm();
    TrajectoryError {
        angle_deg: angle.as_f64().to_degrees(),
        entry_offset_mm: entry.as_f64(),
        tip_offset_mm: tip.as_f64(),
    }
}

/// Six-degree-of-freedom tool increment in the patient frame. Rotation is an
/// axis-angle vector in degrees about the current tool tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SteerCommand<T: Real> {
    pub translate_mm: Vector3<T>,
    pub rotate_deg: Vector3<T>,
}

impl<T: Real> SteerCommand<T> {
    pub fn zero() -> Self {
        Self {
            translate_mm: Vector3::zeros(),
            rotate_deg: Vector3::zeros(),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            translate_mm: -self.translate_mm,
            rotate_deg: -self.rotate_deg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerLimits {
    pub max_translation_mm: f64,
    pub max_rotation_deg: f64,
}

impl Default for SteerLimits {
    fn default() -> Self {
        Self {
            max_translation_mm: 2.0,
            max_rotation_deg: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteerOutcome<T: Real> {
    /// New true tool pose, tool → tracker.
    pub pose: RigidTransform<T>,
    /// Increment actually applied.
    pub applied: SteerCommand<T>,
    pub clamped: bool,
}

fn clamp_norm<T: Real>(v: Vector3<T>, limit: f64) -> (Vector3<T>, bool) {
    let n = v.norm();
    let limit = T::lit(limit);
    if n > limit {
        (v * (limit / n), true)
    } else {
        (v, false)
    }
}

/// Moves the tool by `command`: rotate about the current tip, then translate,
/// both expressed in the patient frame.
pub fn steer<T: Real>(
    tool: &TrackedBody<T>,
    tool_pose: &RigidTransform<T>,
    ref_pose: &RigidTransform<T>,
    command: &SteerCommand<T>,
    limits: &SteerLimits,
) -> Result<SteerOutcome<T>> {
    let (translate, t_clamped) = clamp_norm(command.translate_mm, limits.max_translation_mm);
    let (rotate, r_clamped) = clamp_norm(command.rotate_deg, limits.max_rotation_deg);
    let current = tool_in_reference(tool, tool_pose, ref_pose)?;
    let rot = rotation_from_degrees(&rotate);
    let tip = current.tip.coords;
    let ref_frame = ref_pose.from_frame().clone();
    let delta = RigidTransform::new(ref_frame.clone(), ref_frame, rot, tip + translate - rot * tip);
    let moved = compose(&delta, &current.tool_to_ref)?;
    let pose = compose(ref_pose, &moved)?;
    Ok(SteerOutcome {
        pose,
        applied: SteerCommand {
            translate_mm: translate,
            rotate_deg: rotate,
        },
        clamped: t_clamped || r_clamped,
    })
}
