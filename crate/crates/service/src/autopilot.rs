//! Scripted operator: steers from the streamed overlays the way the study's
//! guided arm does.

use serde::{Deserialize, Serialize};
use vfnav_core::study::{average_estimates, corrective_command, estimate_from_overlays, on_plan, GuidedArmConfig};

use crate::error::Result;
use crate::session::Session;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutopilotConfig {
    pub frames_per_estimate: usize,
    pub gain: f64,
    pub entry_tolerance_mm: f64,
    pub angle_tolerance_deg: f64,
    pub max_iterations: usize,
}

impl Default for AutopilotConfig {
    fn default() -> Self {
        let g = GuidedArmConfig::default();
        Self {
            frames_per_estimate: g.frames_per_estimate,
            gain: g.gain,
            entry_tolerance_mm: g.entry_tolerance_mm,
            angle_tolerance_deg: g.angle_tolerance_deg,
            max_iterations: g.max_iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutopilotSummary {
    pub iterations: usize,
    pub converged: bool,
}

/// Ticks and steers until the overlay estimate sits on the plan.
pub fn drive_to_plan(session: &mut Session, config: &AutopilotConfig) -> Result<AutopilotSummary> {
    let plan = session.plan().clone();
    for iteration in 1..=config.max_iterations {
        let mut estimates = Vec::with_capacity(config.frames_per_estimate);
        for _ in 0..config.frames_per_estimate {
            let update = session.tick()?;
            let nav = session.navigation().expect("ticking implies navigation");
            if let Ok(e) = estimate_from_overlays(nav, &update.overlays) {
                estimates.push(e);
            }
        }
        let Ok(estimate) = average_estimates(&estimates) else {
            continue;
        };
        if on_plan(&estimate, &plan, config.entry_tolerance_mm, config.angle_tolerance_deg) {
            return Ok(AutopilotSummary {
                iterations: iteration,
                converged: true,
            });
        }
        session.steer(corrective_command(&estimate, &plan, config.gain))?;
    }
    Ok(AutopilotSummary {
        iterations: config.max_iterations,
        converged: false,
    })
}

/// The canonical procedure: attach, calibrate, two navigation shots,
/// navigate, insert.
pub fn run_protocol(session: &mut Session, config: &AutopilotConfig) -> Result<AutopilotSummary> {
    session.attach_reference()?;
    let labels: Vec<String> = session.scene().c_arm_poses.iter().map(|c| c.label.clone()).collect();
    for label in &labels {
        session.take_shot(label)?;
    }
    session.start_navigation()?;
    let summary = drive_to_plan(session, config)?;
    session.insert_and_grade()?;
    Ok(summary)
}
