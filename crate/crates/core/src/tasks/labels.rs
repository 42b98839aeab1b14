use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{MarlError, Result};
use crate::ingest::{encode_height_grayscale, FootprintRecord, HeightBounds};

pub const VINTAGE_BINS: usize = 4;

/// Construction-era bin: before 1980, 1980–2003, 2004–2012, 2013 onward.
pub fn bin_vintage(year: i32) -> usize {
    match year {
        y if y < 1980 => 0,
        y if y < 2004 => 1,
        y if y < 2013 => 2,
        _ => 3,
    }
}

/// Program label → index, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub programs: Vec<String>,
}

impl LabelMap {
    pub fn from_records(records: &[FootprintRecord]) -> Self {
        let set: BTreeSet<&str> = records.iter().map(|r| r.program.as_str()).collect();
        LabelMap {
            programs: set.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn index(&self, program: &str) -> Option<usize> {
        self.programs.binary_search_by(|p| p.as_str().cmp(program)).ok()
    }

    pub fn len(&self) -> usize {
        self.programs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.programs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskLabels {
    pub program_index: usize,
    pub vintage_bin: usize,
    /// Height grayscale divided by 255.
    pub height_gray: f64,
}

impl TaskLabels {
    pub fn from_record(record: &FootprintRecord, programs: &LabelMap, heights: &HeightBounds) -> Result<Self> {
        let program_index = programs
            .index(&record.program)
            .ok_or_else(|| MarlError::Label(format!("program {:?} of {} not in label map", record.program, record.id)))?;
        let gray = encode_height_grayscale(record.height_m, heights.h_min, heights.h_max)?;
        Ok(TaskLabels {
            program_index,
            vintage_bin: bin_vintage(record.vintage_year),
            height_gray: gray as f64 / 255.0,
        })
    }
}
