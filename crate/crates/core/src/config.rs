//! Numeric tolerances used across the engine, collected in one record.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Max deviation of `RᵀR` from identity accepted for a rotation.
    pub rotation_orthonormality: f64,
    /// Ratio of the second to the first singular value of a centred point
    /// cloud below which the cloud counts as collinear.
    pub collinearity_ratio: f64,
    /// `|d1 × d2|` below which two unit directions count as parallel.
    pub parallel_rays: f64,
    /// Largest accepted condition number of a line-bundle normal matrix.
    pub max_bundle_condition: f64,
    /// Relative singular value threshold for the dewarp design matrix rank.
    pub fit_rank_ratio: f64,
    /// Upper-plate fiducial count below which a source estimate is flagged.
    pub recommended_upper_fiducials: usize,
    /// Extent (mm) under which a projected tool axis is a degenerate point.
    pub degenerate_overlay_mm: f64,
    /// Distance (mm) under which a point counts as coincident with the source.
    pub coincident_mm: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        rotation_orthonormality: 1e-9,
        collinearity_ratio: 1e-10,
        parallel_rays: 1e-12,
        max_bundle_condition: 1e10,
        fit_rank_ratio: 1e-12,
        recommended_upper_fiducials: 4,
        degenerate_overlay_mm: 1e-6,
        coincident_mm: 1e-9,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}
