//! Virtual fluoroscopy navigation engine.
//!
//! The crate models a fluoroscopy-based navigation workstation: an optical
//! localizer tracks marker bodies (patient reference, tools, the C-arm grid),
//! each X-ray shot of a two-plate calibration grid is dewarped and used to
//! locate the X-ray source, and the tracked tool is then projected live into
//! every stored calibrated view with the fluoroscope switched off.
//!
//! Geometry, distortion, calibration, tracking and navigation are generic over
//! the scalar type (`f32` or `f64`, see [`Real`]); the concrete `f64` aliases
//! below are what the simulator, the Monte-Carlo study and the service use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod config;
pub mod distortion;
pub mod error;
pub mod geometry;
pub mod navigation;
pub mod phantom;
pub mod scalar;
pub mod study;
pub mod tracking;

pub use error::{Error, Result};
pub use scalar::Real;

pub type RigidTransform64 = geometry::RigidTransform<f64>;
pub type RigidTransform32 = geometry::RigidTransform<f32>;
pub type Ray64 = geometry::Ray3<f64>;
pub type Ray32 = geometry::Ray3<f32>;
pub type DistortionParams64 = distortion::DistortionParams<f64>;
pub type DewarpModel64 = distortion::DewarpModel<f64>;
pub type DewarpModel32 = distortion::DewarpModel<f32>;
pub type GridObservation64 = distortion::GridObservation<f64>;
pub type CalibrationGrid64 = calibration::CalibrationGridGeometry<f64>;
pub type CalibratedView64 = calibration::CalibratedView<f64>;
pub type CalibratedView32 = calibration::CalibratedView<f32>;
pub type TrackedBody64 = tracking::TrackedBody<f64>;
pub type TrackerFrame64 = tracking::TrackerFrame<f64>;
pub type NavigationSession64 = navigation::NavigationSession<f64>;
pub type PlannedTrajectory64 = navigation::PlannedTrajectory<f64>;
