//! Shape metrics, EUI provision, area-weighted aggregation and accuracy.

mod metrics;
mod report;

pub use metrics::{compute_shape_metrics, record_surrogate_eui, surrogate, surrogate_eui, ShapeMetrics};
pub use report::{
    accuracy, accuracy_ratio, aggregate_energy, build_report, round2, ArchetypeArea, BreakdownRow, EnergyReport, EuiAssignment,
    EuiProvider, EuiSource, EuiTable,
};

use crate::error::Result;
use crate::ingest::FootprintRecord;

/// Reference total: the surrogate applied to every building individually,
/// weighted by its own area.
pub fn synthetic_ground_truth(records: &[FootprintRecord]) -> Result<f64> {
    let mut total = 0.0f64;
    for r in records {
        total += record_surrogate_eui(r)? * r.area_m2;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{test_record, UseClass};

    #[test]
    fn ground_truth_of_cube() {
        let mut r = test_record("c", UseClass::Mfh);
        r.vintage_year = 2020;
        assert_eq!(synthetic_ground_truth(&[r]).unwrap(), 8500.0);
        assert_eq!(synthetic_ground_truth(&[]).unwrap(), 0.0);
    }
}
