use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MarlError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("invalid height bounds: h_min={h_min}, h_max={h_max}")]
    InvalidBounds { h_min: f64, h_max: f64 },

    #[error("record {id} does not fit the {canvas_px}px canvas")]
    OutOfCanvas { id: String, canvas_px: usize },

    #[error("dimension mismatch at {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("degenerate building {id}: {reason}")]
    DegenerateBuilding { id: String, reason: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("no EUI available for archetype {0}")]
    Provider(String),

    #[error("image encoding error: {0}")]
    Image(String),
}

impl MarlError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MarlError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dimension(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        MarlError::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Short machine-readable tag used in CLI error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            MarlError::Io { .. } => "io",
            MarlError::Parse(_) => "parse",
            MarlError::InvalidRecord { .. } => "invalid_record",
            MarlError::InvalidBounds { .. } => "invalid_bounds",
            MarlError::OutOfCanvas { .. } => "out_of_canvas",
            MarlError::Dimension { .. } => "dimension",
            MarlError::State(_) => "state",
            MarlError::TrainingDiverged { .. } => "training_diverged",
            MarlError::Config(_) => "config",
            MarlError::Label(_) => "label",
            MarlError::Parameter(_) => "parameter",
            MarlError::DegenerateBuilding { .. } => "degenerate_building",
            MarlError::Input(_) => "input",
            MarlError::MetricUndefined(_) => "metric_undefined",
            MarlError::Provider(_) => "provider",
            MarlError::Image(_) => "image",
        }
    }
}
