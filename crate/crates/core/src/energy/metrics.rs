use serde::{Deserialize, Serialize};

use crate::error::{MarlError, Result};
use crate::geometry;
use crate::ingest::{FootprintRecord, UseClass};
use crate::tasks::{bin_vintage, VINTAGE_BINS};

/// Extruded-prism geometry of one building.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeMetrics {
    pub footprint_area_m2: f64,
    pub perimeter_m: f64,
    pub height_m: f64,
    /// Walls plus roof.
    pub envelope_area_m2: f64,
    pub volume_m3: f64,
    pub sv_ratio: f64,
}

impl ShapeMetrics {
    pub fn from_dimensions(footprint_area_m2: f64, perimeter_m: f64, height_m: f64) -> Self {
        let envelope_area_m2 = perimeter_m * height_m + footprint_area_m2;
        let volume_m3 = footprint_area_m2 * height_m;
        ShapeMetrics {
            footprint_area_m2,
            perimeter_m,
            height_m,
            envelope_area_m2,
            volume_m3,
            sv_ratio: envelope_area_m2 / volume_m3,
        }
    }
}

pub fn compute_shape_metrics(record: &FootprintRecord) -> Result<ShapeMetrics> {
    let degenerate = |reason: &str| MarlError::DegenerateBuilding { id: record.id.clone(), reason: reason.into() };
    if !(record.height_m > 0.0) {
        return Err(degenerate("height must be positive"));
    }
    let area = geometry::area(&record.polygon);
    if !(area > 0.0) {
        return Err(degenerate("footprint has zero area"));
    }
    let m = ShapeMetrics::from_dimensions(area, geometry::perimeter(&record.polygon), record.height_m);
    if !m.sv_ratio.is_finite() {
        return Err(degenerate("surface-to-volume ratio is not finite"));
    }
    Ok(m)
}

/// Coefficients of the closed-form EUI stand-in used when no simulator
/// output is available. These are fixtures, not physical claims.
pub mod surrogate {
    pub const BASE: f64 = 40.0;
    pub const SV_COEFF: f64 = 30.0;
    pub const REF_HEIGHT_M: f64 = 3.0;
    /// Added per vintage bin, oldest first.
    pub const VINTAGE: [f64; super::VINTAGE_BINS] = [15.0, 8.0, 4.0, 0.0];
    pub const SFH: f64 = 5.0;
    pub const MFH: f64 = 0.0;
    pub const OTHER: f64 = 0.0;
}

/// `BASE + SV_COEFF · sv · REF_HEIGHT + vintage[bin] + class term`, kWh/m².
pub fn surrogate_eui(metrics: &ShapeMetrics, vintage_bin: usize, class: UseClass) -> f64 {
    let class_term = match class {
        UseClass::Sfh => surrogate::SFH,
        UseClass::Mfh => surrogate::MFH,
        UseClass::Other => surrogate::OTHER,
    };
    let v = surrogate::VINTAGE[vintage_bin.min(VINTAGE_BINS - 1)];
    surrogate::BASE + surrogate::SV_COEFF * metrics.sv_ratio * surrogate::REF_HEIGHT_M + v + class_term
}

/// Surrogate EUI of a single record.
pub fn record_surrogate_eui(record: &FootprintRecord) -> Result<f64> {
    Ok(surrogate_eui(&compute_shape_metrics(record)?, bin_vintage(record.vintage_year), record.use_class))
}
