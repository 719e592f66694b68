//! Scene files: one JSON document describing the rig, phantom, noise and
//! protocol of a session. Field names carry their units.

use std::path::Path;

use nalgebra::{Point2, Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use vfnav_core::calibration::{CalibrationGridGeometry, DetectorGeometry};
use vfnav_core::distortion::DistortionParams;
use vfnav_core::geometry::{compose, rotation_from_degrees, FrameId, RigidTransform};
use vfnav_core::navigation::{NavigationConfig, SteerLimits};
use vfnav_core::phantom::{rig, PediclePhantom, ProtocolConstants, Side};
use vfnav_core::tracking::NoiseModel;

use crate::error::{Result, ServiceError};

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scene {
    pub version: u32,
    pub seed: u64,
    pub tracker: TrackerSpec,
    pub imaging: ImagingSpec,
    pub detector: DetectorSpec,
    pub grid: GridSpec,
    pub phantom: PhantomSpec,
    pub reference_pose: PoseSpec,
    pub tool: ToolStartSpec,
    pub c_arm_poses: Vec<CArmPoseSpec>,
    pub protocol: ProtocolSpec,
    pub steer_limits: SteerLimitSpec,
    pub screw: ScrewSpec,
    pub navigation: NavigationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSpec {
    pub rate_hz: u32,
    pub marker_sigma_mm: f64,
    pub dropout_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingSpec {
    pub image_noise_px: f64,
    pub dewarp_degree: usize,
    pub k1_per_px2: f64,
    pub k2_per_px4: f64,
    pub s_rot_rad: f64,
    pub source_distance_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub pixel_pitch_mm: f64,
    pub principal_point_px: [f64; 2],
    pub image_radius_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub lower_count: usize,
    pub lower_spacing_mm: f64,
    pub upper_count: usize,
    pub upper_spacing_mm: f64,
    pub plate_separation_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub half_width_mm: f64,
    pub entry_depth_mm: f64,
    pub medial_angle_deg: f64,
    pub pedicle_radius_mm: f64,
    pub channel_length_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSpec {
    /// Rotation vector, degrees.
    pub rotation_deg: [f64; 3],
    pub translation_mm: [f64; 3],
}

/// Starting tool placement relative to the planned trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolStartSpec {
    pub target_side: Side,
    pub entry_offset_mm: [f64; 3],
    pub tilt_deg: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CArmPreset {
    Ap,
    Lateral,
    Oblique,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CArmPoseSpec {
    pub label: String,
    pub preset: CArmPreset,
    #[serde(default)]
    pub tilt_deg: f64,
    /// Extra motion of the grid in the patient frame.
    #[serde(default)]
    pub offset: PoseSpec,
    /// Flex of the true source away from its nominal position, grid frame.
    #[serde(default)]
    pub source_offset_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSpec {
    pub shot_duration_s: f64,
    pub conventional_run_s: f64,
    pub operative_time_virtual_min: f64,
    pub operative_time_conventional_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerLimitSpec {
    pub max_translation_mm: f64,
    pub max_rotation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScrewSpec {
    pub radius_mm: f64,
    pub insertion_depth_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavigationSpec {
    pub axis_samples: usize,
    pub extension_mm: f64,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            version: SCENE_VERSION,
            seed: 1,
            tracker: TrackerSpec::default(),
            imaging: ImagingSpec::default(),
            detector: DetectorSpec::default(),
            grid: GridSpec::default(),
            phantom: PhantomSpec::default(),
            reference_pose: PoseSpec {
                rotation_deg: [0.0, 0.0, 0.0],
                translation_mm: [0.0, 0.0, -1500.0],
            },
            tool: ToolStartSpec::default(),
            c_arm_poses: vec![
                CArmPoseSpec {
                    label: "calibration".into(),
                    preset: CArmPreset::Oblique,
                    tilt_deg: 15.0,
                    offset: PoseSpec::default(),
                    source_offset_mm: [1.0, -1.5, 3.0],
                },
                CArmPoseSpec {
                    label: "AP".into(),
                    preset: CArmPreset::Ap,
                    tilt_deg: 0.0,
                    offset: PoseSpec::default(),
                    source_offset_mm: [-2.0, 1.0, -4.0],
                },
                CArmPoseSpec {
                    label: "lateral".into(),
                    preset: CArmPreset::Lateral,
                    tilt_deg: 0.0,
                    offset: PoseSpec::default(),
                    source_offset_mm: [1.5, 2.0, 2.0],
                },
            ],
            protocol: ProtocolSpec::default(),
            steer_limits: SteerLimitSpec::default(),
            screw: ScrewSpec::default(),
            navigation: NavigationSpec::default(),
        }
    }
}

impl Default for TrackerSpec {
    fn default() -> Self {
        Self {
            rate_hz: 30,
            marker_sigma_mm: 0.25,
            dropout_prob: 0.0,
        }
    }
}

impl Default for ImagingSpec {
    fn default() -> Self {
        let d = rig::distortion();
        Self {
            image_noise_px: 0.5,
            dewarp_degree: 4,
            k1_per_px2: d.k1,
            k2_per_px4: d.k2,
            s_rot_rad: d.s_rot,
            source_distance_mm: rig::SOURCE_DISTANCE_MM,
        }
    }
}

impl Default for DetectorSpec {
    fn default() -> Self {
        let d = rig::detector();
        Self {
            pixel_pitch_mm: d.pixel_pitch_mm,
            principal_point_px: [d.principal_point_px.x, d.principal_point_px.y],
            image_radius_px: d.image_radius_px,
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lower_count: 11,
            lower_spacing_mm: 10.0,
            upper_count: 3,
            upper_spacing_mm: 22.0,
            plate_separation_mm: 200.0,
        }
    }
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            half_width_mm: 20.0,
            entry_depth_mm: 20.0,
            medial_angle_deg: 10.0,
            pedicle_radius_mm: 3.5,
            channel_length_mm: 45.0,
        }
    }
}

impl Default for PoseSpec {
    fn default() -> Self {
        Self {
            rotation_deg: [0.0; 3],
            translation_mm: [0.0; 3],
        }
    }
}

impl Default for ToolStartSpec {
    fn default() -> Self {
        Self {
            target_side: Side::Left,
            entry_offset_mm: [2.0, -1.5, 1.0],
            tilt_deg: [3.0, -2.0, 0.0],
        }
    }
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        let p = ProtocolConstants::default();
        Self {
            shot_duration_s: p.shot_duration_s,
            conventional_run_s: p.conventional_run_s,
            operative_time_virtual_min: p.operative_time_virtual_min,
            operative_time_conventional_min: p.operative_time_conventional_min,
        }
    }
}

impl Default for SteerLimitSpec {
    fn default() -> Self {
        let l = SteerLimits::default();
        Self {
            max_translation_mm: l.max_translation_mm,
            max_rotation_deg: l.max_rotation_deg,
        }
    }
}

impl Default for ScrewSpec {
    fn default() -> Self {
        Self {
            radius_mm: 2.0,
            insertion_depth_mm: 40.0,
        }
    }
}

impl Default for NavigationSpec {
    fn default() -> Self {
        let n = NavigationConfig::default();
        Self {
            axis_samples: n.axis_samples,
            extension_mm: n.extension_mm,
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> ServiceError {
    ServiceError::SceneValidation {
        path: path.to_string(),
        message: message.into(),
    }
}

fn check(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(path, message))
    }
}

fn finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

impl Scene {
    /// Parses and validates a scene; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scene: Scene = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenes serialize")
    }

    pub fn validate(&self) -> Result<()> {
        check(self.version == SCENE_VERSION, "version", &format!("expected {SCENE_VERSION}"))?;
        let t = &self.tracker;
        check(t.rate_hz > 0, "tracker.rate_hz", "must be positive")?;
        check(
            t.marker_sigma_mm.is_finite() && t.marker_sigma_mm >= 0.0,
            "tracker.marker_sigma_mm",
            "must be finite and >= 0",
        )?;
        check(
            (0.0..1.0).contains(&t.dropout_prob),
            "tracker.dropout_prob",
            "must lie in [0, 1)",
        )?;
        let im = &self.imaging;
        check(
            im.image_noise_px.is_finite() && im.image_noise_px >= 0.0,
            "imaging.image_noise_px",
            "must be finite and >= 0",
        )?;
        check((1..=8).contains(&im.dewarp_degree), "imaging.dewarp_degree", "must lie in 1..=8")?;
        check(
            im.source_distance_mm > self.grid.plate_separation_mm,
            "imaging.source_distance_mm",
            "must exceed grid.plate_separation_mm",
        )?;
        self.distortion()
            .validate()
            .map_err(|e| invalid("imaging.k1_per_px2", e.to_string()))?;
        let d = &self.detector;
        check(d.pixel_pitch_mm > 0.0, "detector.pixel_pitch_mm", "must be positive")?;
        check(finite(&d.principal_point_px), "detector.principal_point_px", "must be finite")?;
        check(d.image_radius_px > 0.0, "detector.image_radius_px", "must be positive")?;
        let g = &self.grid;
        check(g.lower_count >= 3, "grid.lower_count", "must be at least 3")?;
        check(g.lower_spacing_mm > 0.0, "grid.lower_spacing_mm", "must be positive")?;
        check(g.upper_count >= 2, "grid.upper_count", "must be at least 2")?;
        check(g.upper_spacing_mm > 0.0, "grid.upper_spacing_mm", "must be positive")?;
        check(g.plate_separation_mm > 0.0, "grid.plate_separation_mm", "must be positive")?;
        let p = &self.phantom;
        check(p.pedicle_radius_mm > 0.0, "phantom.pedicle_radius_mm", "must be positive")?;
        check(p.channel_length_mm > 0.0, "phantom.channel_length_mm", "must be positive")?;
        check(
            finite(&[p.half_width_mm, p.entry_depth_mm, p.medial_angle_deg]),
            "phantom",
            "values must be finite",
        )?;
        check(
            finite(&self.reference_pose.rotation_deg) && finite(&self.reference_pose.translation_mm),
            "reference_pose",
            "values must be finite",
        )?;
        check(
            finite(&self.tool.entry_offset_mm) && finite(&self.tool.tilt_deg),
            "tool",
            "values must be finite",
        )?;
        check(!self.c_arm_poses.is_empty(), "c_arm_poses", "at least one pose is required")?;
        for (i, c) in self.c_arm_poses.iter().enumerate() {
            let path = format!("c_arm_poses[{i}]");
            check(!c.label.is_empty(), &format!("{path}.label"), "must not be empty")?;
            check(
                self.c_arm_poses[..i].iter().all(|o| o.label != c.label),
                &format!("{path}.label"),
                "labels must be unique",
            )?;
            check(
                c.tilt_deg.is_finite() && c.tilt_deg.abs() < 90.0,
                &format!("{path}.tilt_deg"),
                "must lie in (-90, 90)",
            )?;
            check(finite(&c.source_offset_mm), &format!("{path}.source_offset_mm"), "must be finite")?;
        }
        let pr = &self.protocol;
        check(pr.shot_duration_s > 0.0, "protocol.shot_duration_s", "must be positive")?;
        check(pr.conventional_run_s > 0.0, "protocol.conventional_run_s", "must be positive")?;
        let s = &self.steer_limits;
        check(s.max_translation_mm > 0.0, "steer_limits.max_translation_mm", "must be positive")?;
        check(s.max_rotation_deg > 0.0, "steer_limits.max_rotation_deg", "must be positive")?;
        check(self.screw.radius_mm > 0.0, "screw.radius_mm", "must be positive")?;
        check(
            self.screw.insertion_depth_mm > 0.0 && self.screw.insertion_depth_mm <= p.channel_length_mm,
            "screw.insertion_depth_mm",
            "must lie in (0, phantom.channel_length_mm]",
        )?;
        check(self.navigation.axis_samples >= 1, "navigation.axis_samples", "must be at least 1")?;
        check(
            self.navigation.extension_mm >= 0.0,
            "navigation.extension_mm",
            "must be >= 0",
        )?;
        Ok(())
    }

    pub fn detector_geometry(&self) -> DetectorGeometry<f64> {
        DetectorGeometry {
            pixel_pitch_mm: self.detector.pixel_pitch_mm,
            principal_point_px: Point2::from(self.detector.principal_point_px),
            image_radius_px: self.detector.image_radius_px,
        }
    }

    pub fn distortion(&self) -> DistortionParams<f64> {
        DistortionParams {
            k1: self.imaging.k1_per_px2,
            k2: self.imaging.k2_per_px4,
            s_rot: self.imaging.s_rot_rad,
            center: Point2::from(self.detector.principal_point_px),
            domain_radius: self.detector.image_radius_px,
        }
    }

    pub fn grid_geometry(&self) -> CalibrationGridGeometry<f64> {
        let g = &self.grid;
        CalibrationGridGeometry::lattice(
            g.lower_count,
            g.lower_spacing_mm,
            g.upper_count,
            g.upper_spacing_mm,
            g.plate_separation_mm,
            rig::grid_body(),
            self.detector_geometry(),
        )
    }

    pub fn phantom(&self) -> PediclePhantom {
        let p = &self.phantom;
        PediclePhantom::symmetric(
            p.half_width_mm,
            p.entry_depth_mm,
            p.medial_angle_deg,
            p.pedicle_radius_mm,
            p.channel_length_mm,
        )
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            marker_sigma_mm: self.tracker.marker_sigma_mm,
            dropout_prob: self.tracker.dropout_prob,
            seed: self.seed,
        }
    }

    pub fn protocol_constants(&self) -> ProtocolConstants {
        ProtocolConstants {
            shot_duration_s: self.protocol.shot_duration_s,
            conventional_run_s: self.protocol.conventional_run_s,
            operative_time_virtual_min: self.protocol.operative_time_virtual_min,
            operative_time_conventional_min: self.protocol.operative_time_conventional_min,
            ..ProtocolConstants::default()
        }
    }

    pub fn steer_limits(&self) -> SteerLimits {
        SteerLimits {
            max_translation_mm: self.steer_limits.max_translation_mm,
            max_rotation_deg: self.steer_limits.max_rotation_deg,
        }
    }

    pub fn navigation_config(&self) -> NavigationConfig {
        NavigationConfig {
            axis_samples: self.navigation.axis_samples,
            extension_mm: self.navigation.extension_mm,
        }
    }

    /// Patient reference → tracker.
    pub fn reference_pose(&self) -> RigidTransform<f64> {
        pose(&self.reference_pose, rig::REFERENCE_ID, FrameId::TRACKER)
    }

    pub fn c_arm_pose(&self, label: &str) -> Option<&CArmPoseSpec> {
        self.c_arm_poses.iter().find(|c| c.label == label)
    }

    /// Grid → patient for a C-arm pose and the true source in grid
    /// coordinates.
    pub fn grid_in_patient(&self, spec: &CArmPoseSpec) -> (RigidTransform<f64>, Point3<f64>) {
        let nominal = match spec.preset {
            CArmPreset::Ap => rig::ap_grid_in_patient(),
            CArmPreset::Lateral => rig::lateral_grid_in_patient(),
            CArmPreset::Oblique => rig::oblique_grid_in_patient(spec.tilt_deg),
        };
        let offset = pose(&spec.offset, rig::REFERENCE_ID, rig::REFERENCE_ID);
        let grid = compose(&offset, &nominal).expect("frames chain");
        let source = Point3::new(0.0, 0.0, self.imaging.source_distance_mm) + Vector3::from(spec.source_offset_mm);
        (grid, source)
    }
}

fn pose(spec: &PoseSpec, from: &str, to: &str) -> RigidTransform<f64> {
    let rot: UnitQuaternion<f64> = rotation_from_degrees(&Vector3::from(spec.rotation_deg));
    RigidTransform::new(from, to, rot, Vector3::from(spec.translation_mm))
}
