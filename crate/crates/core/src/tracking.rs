//! Simulated optical localizer: marker bodies, noisy marker observations and
//! pose recovery.
//!
//! Randomness is counter-based: every (seed, stream) pair yields the same
//! draws regardless of call order, so sessions replay bit-identically.

use std::collections::BTreeMap;

use nalgebra::{Point3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{compose, register_point_sets, FrameId, Ray3, RigidTransform};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ToolGeometry<T: Real> {
    /// Tip position in the body frame, mm.
    pub tip_offset: Vector3<T>,
    /// Forward (insertion) direction in the body frame.
    pub axis_dir: Vector3<T>,
    /// Length of the shaft behind the tip, mm.
    pub working_length: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrackedBody<T: Real> {
    pub body_id: String,
    /// Marker positions in the body frame, mm.
    pub markers: Vec<Point3<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolGeometry<T>>,
}

impl<T: Real> TrackedBody<T> {
    pub fn new(body_id: impl Into<String>, markers: Vec<Point3<T>>) -> Result<Self> {
        let body = Self {
            body_id: body_id.into(),
            markers,
            tool: None,
        };
        body.validate()?;
        Ok(body)
    }

    pub fn with_tool(mut self, tip_offset: Vector3<T>, axis_dir: Vector3<T>, working_length: T) -> Result<Self> {
        let n = axis_dir.norm();
        if !(n > T::zero()) {
            return Err(Error::InvalidParameter("tool axis has zero length".into()));
        }
        self.tool = Some(ToolGeometry {
            tip_offset,
            axis_dir: axis_dir / n,
            working_length,
        });
        self.validate()?;
        Ok(self)
    }

    pub fn frame(&self) -> FrameId {
        FrameId::new(self.body_id.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.markers.len() < 3 {
            return Err(Error::InsufficientMarkers {
                got: self.markers.len(),
            });
        }
        // a congruent self-registration fails exactly when the markers are collinear
        register_point_sets(&self.markers, &self.markers)?;
        if let Some(tool) = &self.tool {
            if (tool.axis_dir.norm() - T::one()).abs() > T::lit(1e-9) {
                return Err(Error::InvalidParameter("tool axis must be a unit vector".into()));
            }
            if !(tool.working_length >= T::zero()) {
                return Err(Error::InvalidParameter("working length must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Isotropic per-axis marker noise, mm.
    pub marker_sigma_mm: f64,
    /// Probability that a marker is missing from a frame.
    pub dropout_prob: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            marker_sigma_mm: 0.0,
            dropout_prob: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.marker_sigma_mm >= 0.0) || !self.marker_sigma_mm.is_finite() {
            return Err(Error::InvalidParameter("marker sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidParameter("dropout probability must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Stream domains for [`sim_rng`].
pub mod stream {
    pub const MARKERS: u8 = 1;
    pub const IMAGE: u8 = 2;
    pub const TRIAL: u8 = 3;
    pub const SCENE: u8 = 4;
}

/// Deterministic generator for one (domain, index, slot) stream of a seed.
pub fn sim_rng(seed: u64, domain: u8, index: u64, slot: u16) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = ((domain as u64) << 56) | ((index & 0x00ff_ffff_ffff) << 16) | slot as u64;
    rng.set_stream(key);
    rng
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

/// Markers of `body` seen through the localizer at `true_pose`
/// (body → tracker), with Gaussian noise and random dropouts. `None` marks a
/// dropped marker; indices follow `body.markers`.
pub fn observe<T: Real, R: Rng + ?Sized>(
    body: &TrackedBody<T>,
    true_pose: &RigidTransform<T>,
    noise: &NoiseModel,
    rng: &mut R,
) -> Vec<Option<Point3<T>>> {
    body.markers
        .iter()
        .map(|m| {
            let dropped = rng.random::<f64>() < noise.dropout_prob;
            let jitter = Vector3::new(
                T::lit(gaussian(rng, noise.marker_sigma_mm)),
                T::lit(gaussian(rng, noise.marker_sigma_mm)),
                T::lit(gaussian(rng, noise.marker_sigma_mm)),
            );
            (!dropped).then(|| true_pose.apply_point(m) + jitter)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BodyState<T: Real> {
    /// Body → tracker; present only with at least three visible markers.
    pub pose: Option<RigidTransform<T>>,
    pub rms: T,
    pub visible_marker_count: usize,
}

/// Pose of a body recovered from visible markers (body → tracker).
pub fn localize<T: Real>(body: &TrackedBody<T>, observed: &[Option<Point3<T>>]) -> Result<BodyState<T>> {
    if observed.len() != body.markers.len() {
        return Err(Error::LengthMismatch {
            model: body.markers.len(),
            observed: observed.len(),
        });
    }
    let (model, seen): (Vec<Point3<T>>, Vec<Point3<T>>) = body
        .markers
        .iter()
        .zip(observed)
        .filter_map(|(m, o)| o.map(|o| (*m, o)))
        .unzip();
    if seen.len() < 3 {
        return Err(Error::BodyNotVisible {
            body: body.body_id.clone(),
            visible: seen.len(),
        });
    }
    let reg = register_point_sets(&model, &seen)?;
    Ok(BodyState {
        pose: Some(reg.transform.with_frames(body.frame(), FrameId::TRACKER)),
        rms: reg.rms,
        visible_marker_count: seen.len(),
    })
}

/// One localizer sample of every body in the field of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrackerFrame<T: Real> {
    pub frame_index: u64,
    /// Simulated milliseconds since session start.
    pub timestamp_ms: u64,
    pub bodies: BTreeMap<String, BodyState<T>>,
}

impl<T: Real> TrackerFrame<T> {
    pub fn pose(&self, body_id: &str) -> Result<&RigidTransform<T>> {
        match self.bodies.get(body_id) {
            Some(BodyState { pose: Some(p), .. }) => Ok(p),
            Some(state) => Err(Error::BodyNotVisible {
                body: body_id.to_string(),
                visible: state.visible_marker_count,
            }),
            None => Err(Error::BodyNotVisible {
                body: body_id.to_string(),
                visible: 0,
            }),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("tracker frames serialize")
    }
}

/// Tool tip and forward axis in the patient reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolPose<T: Real> {
    pub tip: Point3<T>,
    pub axis: Ray3<T>,
    /// Tool body → patient reference.
    pub tool_to_ref: RigidTransform<T>,
}

pub fn tool_tip_and_axis<T: Real>(frame: &TrackerFrame<T>, tool: &TrackedBody<T>, ref_id: &str) -> Result<ToolPose<T>> {
    let tool_pose = frame.pose(&tool.body_id)?;
    let ref_pose = frame.pose(ref_id)?;
    tool_in_reference(tool, tool_pose, ref_pose)
}

/// `ref⁻¹ · tool` applied to the tool tip and axis.
pub fn tool_in_reference<T: Real>(
    tool: &TrackedBody<T>,
    tool_pose: &RigidTransform<T>,
    ref_pose: &RigidTransform<T>,
) -> Result<ToolPose<T>> {
    let tool_to_ref = compose(&ref_pose.inverse(), tool_pose)?;
    let (offset, dir) = match &tool.tool {
        Some(g) => (g.tip_offset, g.axis_dir),
        None => (Vector3::zeros(), Vector3::z()),
    };
    let tip = tool_to_ref.apply_point(&Point3::from(offset));
    let axis = Ray3 {
        origin: tip,
        direction: Unit::new_normalize(tool_to_ref.apply_vector(&dir)),
    };
    Ok(ToolPose { tip, axis, tool_to_ref })
}

/// Frame-producing localizer simulator.
///
/// Bodies without a true pose are outside the field of view and are absent
/// from frames.
#[derive(Debug, Clone)]
pub struct Localizer<T: Real> {
    bodies: Vec<TrackedBody<T>>,
    true_poses: Vec<Option<RigidTransform<T>>>,
    noise: NoiseModel,
    rate_hz: u32,
    next_frame: u64,
}

impl<T: Real> Localizer<T> {
    pub fn new(noise: NoiseModel, rate_hz: u32) -> Result<Self> {
        noise.validate()?;
        if rate_hz == 0 {
            return Err(Error::InvalidParameter("frame rate must be positive".into()));
        }
        Ok(Self {
            bodies: Vec::new(),
            true_poses: Vec::new(),
            noise,
            rate_hz,
            next_frame: 0,
        })
    }

    /// Registers a body; its slot index feeds the noise stream.
    pub fn add_body(&mut self, body: TrackedBody<T>, pose: Option<RigidTransform<T>>) -> Result<()> {
        body.validate()?;
        if self.bodies.iter().any(|b| b.body_id == body.body_id) {
            return Err(Error::InvalidParameter(format!("duplicate body `{}`", body.body_id)));
        }
        self.bodies.push(body);
        self.true_poses.push(pose);
        Ok(())
    }

    fn slot(&self, body_id: &str) -> Result<usize> {
        self.bodies
            .iter()
            .position(|b| b.body_id == body_id)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown body `{body_id}`")))
    }

    pub fn set_pose(&mut self, body_id: &str, pose: Option<RigidTransform<T>>) -> Result<()> {
        let slot = self.slot(body_id)?;
        self.true_poses[slot] = pose;
        Ok(())
    }

    pub fn true_pose(&self, body_id: &str) -> Result<Option<&RigidTransform<T>>> {
        Ok(self.true_poses[self.slot(body_id)?].as_ref())
    }

    pub fn body(&self, body_id: &str) -> Result<&TrackedBody<T>> {
        Ok(&self.bodies[self.slot(body_id)?])
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn next_frame_index(&self) -> u64 {
        self.next_frame
    }

    pub fn timestamp_ms(&self, frame_index: u64) -> u64 {
        frame_index * 1000 / self.rate_hz as u64
    }

    /// Samples every body at the next frame tick.
    pub fn capture(&mut self) -> TrackerFrame<T> {
        let index = self.next_frame;
        self.next_frame += 1;
        let mut bodies = BTreeMap::new();
        for (slot, (body, pose)) in self.bodies.iter().zip(&self.true_poses).enumerate() {
            let Some(pose) = pose else { continue };
            let mut rng = sim_rng(self.noise.seed, stream::MARKERS, index, slot as u16);
            let seen = observe(body, pose, &self.noise, &mut rng);
            let state = localize(body, &seen).unwrap_or_else(|_| BodyState {
                pose: None,
                rms: T::zero(),
                visible_marker_count: seen.iter().filter(|m| m.is_some()).count(),
            });
            bodies.insert(body.body_id.clone(), state);
        }
        TrackerFrame {
            frame_index: index,
            timestamp_ms: self.timestamp_ms(index),
            bodies,
        }
    }
}
