use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MarlError, Result};
use crate::geometry::{self, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UseClass {
    #[serde(rename = "SFH")]
    Sfh,
    #[serde(rename = "MFH")]
    Mfh,
    #[serde(rename = "OTHER")]
    Other,
}

impl UseClass {
    pub fn as_str(self) -> &'static str {
        match self {
            UseClass::Sfh => "SFH",
            UseClass::Mfh => "MFH",
            UseClass::Other => "OTHER",
        }
    }

    pub fn is_residential(self) -> bool {
        matches!(self, UseClass::Sfh | UseClass::Mfh)
    }
}

impl fmt::Display for UseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UseClass {
    type Err = MarlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SFH" => Ok(UseClass::Sfh),
            "MFH" => Ok(UseClass::Mfh),
            "OTHER" => Ok(UseClass::Other),
            other => Err(MarlError::Parse(format!("unknown use_class {other:?}"))),
        }
    }
}

/// One building footprint with its metadata.
///
/// The polygon is the outer ring only, without a repeated closing vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintRecord {
    pub id: String,
    pub polygon: Vec<Point>,
    pub height_m: f64,
    pub area_m2: f64,
    pub program: String,
    pub vintage_year: i32,
    pub use_class: UseClass,
}

pub const VINTAGE_RANGE: std::ops::RangeInclusive<i32> = 1800..=2100;

impl FootprintRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| MarlError::InvalidRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.polygon.len() < 3 {
            return Err(bad("polygon needs at least 3 vertices"));
        }
        if self.polygon.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(bad("non-finite vertex"));
        }
        if geometry::signed_area(&self.polygon) == 0.0 {
            return Err(bad("polygon has zero area"));
        }
        if !(self.area_m2 > 0.0 && self.area_m2.is_finite()) {
            return Err(bad("area_m2 must be positive"));
        }
        if !(self.height_m >= 0.0 && self.height_m.is_finite()) {
            return Err(bad("height_m must be non-negative"));
        }
        if !VINTAGE_RANGE.contains(&self.vintage_year) {
            return Err(bad("vintage_year outside [1800, 2100]"));
        }
        Ok(())
    }

    pub fn polygon_area(&self) -> f64 {
        geometry::area(&self.polygon)
    }
}

/// Keeps SFH and MFH records, preserving order.
pub fn filter_residential(records: Vec<FootprintRecord>) -> Vec<FootprintRecord> {
    records
        .into_iter()
        .filter(|r| r.use_class.is_residential())
        .collect()
}

#[cfg(test)]
pub(crate) fn test_record(id: &str, class: UseClass) -> FootprintRecord {
    FootprintRecord {
        id: id.to_string(),
        polygon: vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)],
        height_m: 10.0,
        area_m2: 100.0,
        program: "Apartments".into(),
        vintage_year: 1990,
        use_class: class,
    }
}
