use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use marl_core::ingest::{HeightBounds, MultiScaleSpec, RasterSpec};
use marl_core::synth::GeneratorSpec;
use marl_core::tasks::TaskWeights;
use marl_core::vq::{TrainConfig, VqConfig};
use marl_core::Execution;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub execution: ExecutionMode,
    #[serde(default)]
    pub synth: GeneratorSpec,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default)]
    pub model: VqConfig,
    #[serde(default)]
    pub training: Training,
    #[serde(default)]
    pub clustering: Clustering,
    #[serde(default)]
    pub energy: Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Footprint dataset; defaults to the synth stage output.
    #[serde(default)]
    pub data: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    #[default]
    Parallel,
    Sequential,
}

impl From<ExecutionMode> for Execution {
    fn from(m: ExecutionMode) -> Self {
        match m {
            ExecutionMode::Parallel => Execution::Parallel,
            ExecutionMode::Sequential => Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessing {
    pub canvas_px: usize,
    pub meters_per_pixel: f64,
    pub base_px: usize,
    pub side_px: usize,
    pub height_bounds: HeightBounds,
    pub residential_only: bool,
}

impl Default for Preprocessing {
    fn default() -> Self {
        let r = RasterSpec::default();
        let m = MultiScaleSpec::default();
        Preprocessing {
            canvas_px: r.canvas_px,
            meters_per_pixel: r.meters_per_pixel,
            base_px: m.base_px,
            side_px: m.side_px,
            height_bounds: r.heights,
            residential_only: true,
        }
    }
}

impl Preprocessing {
    pub fn raster(&self) -> RasterSpec {
        RasterSpec { canvas_px: self.canvas_px, meters_per_pixel: self.meters_per_pixel, heights: self.height_bounds }
    }

    pub fn scales(&self) -> MultiScaleSpec {
        MultiScaleSpec { base_px: self.base_px, side_px: self.side_px }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub pretrain_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub reseed_dead_codes: bool,
    /// Run the one-epoch task-pool fine-tune after pretraining.
    pub finetune: bool,
    pub finetune_batch_size: usize,
    pub task_weights: TaskWeights,
}

impl Default for Training {
    fn default() -> Self {
        let t = TrainConfig::default();
        Training {
            pretrain_epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            seed: t.seed,
            reseed_dead_codes: t.reseed_dead_codes,
            finetune: true,
            finetune_batch_size: 4,
            task_weights: TaskWeights::default(),
        }
    }
}

impl Training {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            reseed_dead_codes: self.reseed_dead_codes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionKind {
    Pca,
    NoneFlatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Clustering {
    pub reduction: ReductionKind,
    pub components: usize,
    /// Fixed `k` per use class; classes not listed use the elbow rule.
    pub k: BTreeMap<String, usize>,
    pub k_range: (usize, usize),
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for Clustering {
    fn default() -> Self {
        Clustering {
            reduction: ReductionKind::Pca,
            components: marl_core::cluster::DEFAULT_PCA_COMPONENTS,
            k: BTreeMap::from([
                ("SFH".to_string(), marl_core::cluster::REFERENCE_K_SFH),
                ("MFH".to_string(), marl_core::cluster::REFERENCE_K_MFH),
            ]),
            k_range: (1, 6),
            restarts: 10,
            max_iterations: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EuiSourceKind {
    Surrogate,
    ExternalTable,
}

/// Where the reference total comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Value(f64),
    /// `"synthetic"` applies the surrogate to every ingested building;
    /// anything else is a path to a JSON number or a CSV with a `kwh` column.
    Source(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Energy {
    pub eui_source: EuiSourceKind,
    pub eui_table: Option<PathBuf>,
    pub ground_truth: GroundTruth,
    /// One EUI per use class for the baseline comparison.
    pub baseline_eui: Option<BTreeMap<String, f64>>,
    /// `archetype_id,use_class,area_m2` table used instead of the archetypes stage.
    pub archetype_areas: Option<PathBuf>,
}

impl Default for Energy {
    fn default() -> Self {
        Energy {
            eui_source: EuiSourceKind::Surrogate,
            eui_table: None,
            ground_truth: GroundTruth::Source("synthetic".into()),
            baseline_eui: None,
            archetype_areas: None,
        }
    }
}

/// Sets `a.b.c = value` in a JSON tree, creating objects along the way.
/// `value` is parsed as JSON when possible and kept as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("override key {key:?} has an empty segment")));
        }
        if !node.is_object() {
            return Err(CliError::Config(format!("override {key:?}: {} is not an object", parts[..i].join("."))));
        }
        let obj = node.as_object_mut().expect("checked");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

impl RunConfig {
    /// Reads the config, applies overrides and resolves relative paths
    /// against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Core(marl_core::MarlError::io(path, e)))?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.paths.out);
        for p in [&mut cfg.paths.data, &mut cfg.energy.eui_table, &mut cfg.energy.archetype_areas].into_iter().flatten() {
            resolve(p);
        }
        if let GroundTruth::Source(s) = &mut cfg.energy.ground_truth {
            if s != "synthetic" && Path::new(s).is_relative() {
                *s = base.join(&*s).to_string_lossy().into_owned();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.model.side_px != self.preprocessing.side_px {
            return Err(CliError::Config(format!(
                "model.side_px ({}) must equal preprocessing.side_px ({})",
                self.model.side_px, self.preprocessing.side_px
            )));
        }
        if self.model.seed != self.training.seed {
            return Err(CliError::Config("model.seed and training.seed must agree".into()));
        }
        self.model.validate()?;
        let (lo, hi) = self.clustering.k_range;
        if lo == 0 || hi < lo {
            return Err(CliError::Config("clustering.k_range must be ascending and start at 1 or more".into()));
        }
        for (class, k) in &self.clustering.k {
            class.parse::<marl_core::ingest::UseClass>()?;
            if *k == 0 {
                return Err(CliError::Config(format!("clustering.k.{class} must be positive")));
            }
        }
        if self.energy.eui_source == EuiSourceKind::ExternalTable && self.energy.eui_table.is_none() {
            return Err(CliError::Config("energy.eui_table is required for the external_table source".into()));
        }
        Ok(())
    }
}
