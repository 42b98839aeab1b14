//! Pipeline stages. Each reads prior artifacts under `<out>/<stage>/` and
//! its own config section, and writes its outputs atomically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use marl_core::cluster::{
    cluster_by_class, elbow_select, embed_dataset, select_archetypes, wcss_curve, Archetype, ClusterModel,
    KMeansConfig, LatentMatrix, Points, Reduction,
};
use marl_core::energy::{build_report, synthetic_ground_truth, ArchetypeArea, EuiProvider, EuiSource, EuiTable};
use marl_core::ingest::{
    decode_image_stack, encode_image_stack, filter_residential, parse_footprint_dataset, prepare_images, write_geojson_string,
    DatasetFormat, FootprintRecord, MultiScaleImage, UseClass,
};
use marl_core::io::{read_bytes, read_json, write_atomic, write_json};
use marl_core::nn::Checkpoint;
use marl_core::synth::generate_footprints;
use marl_core::tasks::{finetune, joint_checkpoint, LabelMap, TaskLabels, TaskPool};
use marl_core::vq::{pretrain, LossBreakdown, VqAutoencoder};
use marl_core::{plot, Execution, MarlError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{EuiSourceKind, GroundTruth, ReductionKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::logging::event;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Synth,
    Ingest,
    Train,
    Embed,
    Cluster,
    Archetypes,
    Evaluate,
    Plot,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Archetypes => "archetypes",
            Stage::Evaluate => "evaluate",
            Stage::Plot => "plot",
        }
    }
}

const CLASSES: [UseClass; 3] = [UseClass::Sfh, UseClass::Mfh, UseClass::Other];
const PREVIEW_COUNT: usize = 8;

pub struct Context {
    pub cfg: RunConfig,
    pub stage: Stage,
    exec: Execution,
}

impl Context {
    pub fn new(cfg: RunConfig, stage: Stage) -> Self {
        let exec = cfg.execution.into();
        Context { cfg, stage, exec }
    }

    fn out(&self) -> &Path {
        &self.cfg.paths.out
    }

    fn stage_dir(&self) -> CliResult<PathBuf> {
        let dir = self.out().join(self.stage.name());
        std::fs::create_dir_all(&dir).map_err(|e| MarlError::io(&dir, e))?;
        Ok(dir)
    }

    /// Path of a prior artifact, or a stage-dependency error naming it.
    fn require(&self, path: PathBuf) -> CliResult<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::StageDependency { stage: self.stage.name(), missing: path })
        }
    }

    fn artifact(&self, stage: &str, file: &str) -> CliResult<PathBuf> {
        self.require(self.out().join(stage).join(file))
    }

    fn log(&self, msg: &str, fields: Value) {
        event(self.stage.name(), msg, fields);
    }

    pub fn run(&self) -> CliResult<()> {
        match self.stage {
            Stage::Synth => self.synth(),
            Stage::Ingest => self.ingest(),
            Stage::Train => self.train(),
            Stage::Embed => self.embed(),
            Stage::Cluster => self.cluster(),
            Stage::Archetypes => self.archetypes(),
            Stage::Evaluate => self.evaluate().map(|_| ()),
            Stage::Plot => self.plot(),
        }
    }

    fn synth(&self) -> CliResult<()> {
        let spec = &self.cfg.synth;
        let records = generate_footprints(spec, self.exec)?;
        let dir = self.stage_dir()?;
        write_atomic(&dir.join("footprints.geojson"), write_geojson_string(&records).as_bytes())?;
        let summary = json!({ "records": records.len(), "classes": class_counts(&records), "spec": spec });
        write_json(&dir.join("summary.json"), &summary)?;
        self.log("generated footprints", json!({ "records": records.len() }));
        Ok(())
    }

    fn dataset_path(&self) -> CliResult<PathBuf> {
        match &self.cfg.paths.data {
            Some(p) => self.require(p.clone()),
            None => self.artifact("synth", "footprints.geojson"),
        }
    }

    fn ingest(&self) -> CliResult<()> {
        let path = self.dataset_path()?;
        let parsed = parse_footprint_dataset(&path, DatasetFormat::from_path(&path)?)?;
        let parsed_count = parsed.records.len();
        let records = if self.cfg.preprocessing.residential_only { filter_residential(parsed.records) } else { parsed.records };
        if records.is_empty() {
            return Err(MarlError::Input(format!("{} holds no usable footprints", path.display())).into());
        }
        let pre = &self.cfg.preprocessing;
        let images = prepare_images(&records, &pre.raster(), &pre.scales(), self.exec)?;
        let dir = self.stage_dir()?;
        write_atomic(&dir.join("records.geojson"), write_geojson_string(&records).as_bytes())?;
        write_atomic(&dir.join("images.bin"), &encode_image_stack(&images)?)?;
        for img in images.iter().take(PREVIEW_COUNT) {
            let tiles: Vec<Vec<f32>> = (0..3).map(|c| img.channel(c).to_vec()).collect();
            let png = plot::image_grid_png(&tiles, img.side(), 3)?;
            write_atomic(&dir.join(format!("preview_{}.png", img.source_id)), &png)?;
        }
        let summary = json!({
            "source": path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "parsed": parsed_count,
            "skipped": parsed.skipped,
            "filtered_non_residential": parsed_count - records.len(),
            "records": records.len(),
            "classes": class_counts(&records),
            "side_px": pre.side_px,
        });
        write_json(&dir.join("summary.json"), &summary)?;
        self.log("ingested", json!({ "records": records.len(), "skipped": parsed.skipped }));
        Ok(())
    }

    fn load_records(&self) -> CliResult<Vec<FootprintRecord>> {
        let path = self.artifact("ingest", "records.geojson")?;
        Ok(parse_footprint_dataset(&path, DatasetFormat::Geojson)?.records)
    }

    fn load_images(&self) -> CliResult<Vec<MultiScaleImage>> {
        let path = self.artifact("ingest", "images.bin")?;
        Ok(decode_image_stack(&read_bytes(&path)?)?)
    }

    fn load_model(&self) -> CliResult<VqAutoencoder> {
        let path = self.artifact("train", "checkpoint.bin")?;
        let mut model = VqAutoencoder::from_checkpoint(&Checkpoint::decode(&read_bytes(&path)?)?)?;
        model.set_execution(self.exec);
        Ok(model)
    }

    fn train(&self) -> CliResult<()> {
        let records = self.load_records()?;
        let images = self.load_images()?;
        let t = &self.cfg.training;
        let mut model = VqAutoencoder::new(self.cfg.model.clone())?;
        model.set_execution(self.exec);
        let cfg = t.train_config();
        let mut history: Vec<(&str, LossBreakdown)> = Vec::new();
        for (epoch, loss) in pretrain(&mut model, &images, &cfg)?.into_iter().enumerate() {
            self.log("pretrain epoch", json!({ "epoch": epoch, "reconstruction": loss.reconstruction, "total": loss.weighted_total }));
            history.push(("pretrain", loss));
        }
        let pool = if t.finetune {
            let map = LabelMap::from_records(&records);
            let heights = self.cfg.preprocessing.height_bounds;
            let labels = records.iter().map(|r| TaskLabels::from_record(r, &map, &heights)).collect::<Result<Vec<_>, _>>()?;
            let mut pool = TaskPool::new(&model, map, labels, t.task_weights, t.seed)?;
            let ft_cfg = marl_core::vq::TrainConfig { batch_size: t.finetune_batch_size, ..cfg.clone() };
            let loss = finetune(&mut model, &mut pool, &images, &ft_cfg)?;
            self.log("finetune epoch", json!({ "reconstruction": loss.reconstruction, "dtp": loss.dtp_total, "total": loss.weighted_total }));
            history.push(("finetune", loss));
            Some(pool)
        } else {
            None
        };
        let dir = self.stage_dir()?;
        let meta = serde_json::to_value(t).expect("training config serializes");
        write_atomic(&dir.join("checkpoint.bin"), &joint_checkpoint(&model, pool.as_ref(), meta)?)?;
        write_atomic(&dir.join("loss_history.csv"), history_csv(&history).as_bytes())?;
        let summary = json!({
            "pretrain_epochs": cfg.epochs,
            "finetuned": t.finetune,
            "first_reconstruction": history.first().map(|h| h.1.reconstruction),
            "final_reconstruction": history.last().map(|h| h.1.reconstruction),
        });
        write_json(&dir.join("summary.json"), &summary)?;
        Ok(())
    }

    fn embed(&self) -> CliResult<()> {
        let model = self.load_model()?;
        let images = self.load_images()?;
        let flat = embed_dataset(&model, &images, Reduction::NoneFlatten, self.exec)?;
        let latents = match self.cfg.clustering.reduction {
            ReductionKind::NoneFlatten => flat,
            ReductionKind::Pca => flat.reduce_pca(self.cfg.clustering.components)?.0,
        };
        let dir = self.stage_dir()?;
        write_atomic(&dir.join("latents.bin"), &latents.to_bytes()?)?;
        write_json(&dir.join("summary.json"), &json!({ "rows": latents.rows(), "dim": latents.dim, "reduction": latents.reduction }))?;
        self.log("embedded", json!({ "rows": latents.rows(), "dim": latents.dim }));
        Ok(())
    }

    fn load_latents(&self) -> CliResult<LatentMatrix> {
        let path = self.artifact("embed", "latents.bin")?;
        Ok(LatentMatrix::from_bytes(&read_bytes(&path)?)?)
    }

    fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig { restarts: self.cfg.clustering.restarts, max_iterations: self.cfg.clustering.max_iterations }
    }

    fn cluster(&self) -> CliResult<()> {
        let latents = self.load_latents()?;
        let records = self.load_records()?;
        let c = &self.cfg.clustering;
        let km = self.kmeans_config();
        let mut curves: BTreeMap<UseClass, Vec<(usize, f64)>> = BTreeMap::new();
        let mut k_source: BTreeMap<UseClass, &str> = BTreeMap::new();
        let groups = cluster_by_class(
            &latents,
            &records,
            |class, sub| {
                let hi = c.k_range.1.min(sub.rows());
                let ks: Vec<usize> = (c.k_range.0..=hi).collect();
                let curve = wcss_curve(Points::new(&sub.data, sub.dim)?, &ks, c.seed, &km, self.exec)?;
                let k = match c.k.get(class.as_str()) {
                    Some(&k) => {
                        k_source.insert(class, "fixed");
                        k
                    }
                    None => {
                        k_source.insert(class, "elbow");
                        elbow_select(&curve, None)?
                    }
                };
                curves.insert(class, curve);
                Ok(k)
            },
            c.seed,
            &km,
            self.exec,
        )?;
        let dir = self.stage_dir()?;
        let mut summary = Vec::new();
        for g in &groups {
            let class = g.use_class;
            let file = ClassModelFile { use_class: class, ids: g.latents.ids.clone(), model: g.model.clone() };
            write_json(&dir.join(format!("model_{}.json", class.as_str())), &file)?;
            let mut csv = String::from("k,wcss\n");
            for (k, w) in &curves[&class] {
                writeln!(csv, "{k},{w}").expect("string write");
            }
            write_atomic(&dir.join(format!("wcss_{}.csv", class.as_str())), csv.as_bytes())?;
            summary.push(json!({
                "use_class": class,
                "members": g.latents.rows(),
                "k": g.model.k,
                "k_source": k_source[&class],
                "wcss": g.model.wcss,
                "converged": g.model.converged,
            }));
            self.log("clustered", json!({ "use_class": class, "k": g.model.k, "wcss": g.model.wcss }));
        }
        write_json(&dir.join("summary.json"), &json!({ "classes": summary }))?;
        Ok(())
    }

    fn load_class_models(&self) -> CliResult<Vec<ClassModelFile>> {
        let dir = self.out().join("cluster");
        let mut out = Vec::new();
        for class in CLASSES {
            let path = dir.join(format!("model_{}.json", class.as_str()));
            if path.is_file() {
                out.push(read_json(&path)?);
            }
        }
        if out.is_empty() {
            self.require(dir.join("summary.json"))?;
        }
        Ok(out)
    }

    fn archetypes(&self) -> CliResult<()> {
        let latents = self.load_latents()?;
        let records = self.load_records()?;
        let images = self.load_images()?;
        let models = self.load_class_models()?;
        let row_of: BTreeMap<&str, usize> = latents.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let image_of: BTreeMap<&str, &MultiScaleImage> = images.iter().map(|m| (m.source_id.as_str(), m)).collect();
        let record_of: BTreeMap<&str, &FootprintRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();

        let dir = self.stage_dir()?;
        let mut all: Vec<Archetype> = Vec::new();
        let mut empty = BTreeMap::new();
        for m in &models {
            let rows = m
                .ids
                .iter()
                .map(|id| row_of.get(id.as_str()).copied().ok_or_else(|| MarlError::Input(format!("cluster member {id} has no latent row"))))
                .collect::<Result<Vec<_>, _>>()?;
            let sub = latents.select(&rows)?;
            let members = m
                .ids
                .iter()
                .map(|id| record_of.get(id.as_str()).map(|r| (*r).clone()).ok_or_else(|| MarlError::Input(format!("cluster member {id} has no record"))))
                .collect::<Result<Vec<_>, _>>()?;
            let sel = select_archetypes(&m.model, &sub, &members)?;
            empty.insert(m.use_class.as_str(), sel.empty_clusters);
            all.extend(sel.archetypes);
        }
        let mut areas = String::from("archetype_id,use_class,area_m2\n");
        for a in &all {
            let id = a.id();
            let img = image_of
                .get(a.representative_id.as_str())
                .ok_or_else(|| MarlError::Input(format!("no image for {}", a.representative_id)))?;
            let tiles: Vec<Vec<f32>> = (0..3).map(|c| img.channel(c).to_vec()).collect();
            write_atomic(&dir.join(format!("{id}.png")), &plot::image_grid_png(&tiles, img.side(), 3)?)?;
            let sidecar = json!({
                "archetype_id": id,
                "use_class": a.use_class,
                "cluster_index": a.cluster_index,
                "representative_id": a.representative_id,
                "cluster_total_area_m2": a.cluster_total_area_m2,
                "member_count": a.member_count,
                "height_m": a.representative_footprint.height_m,
                "vintage_year": a.representative_footprint.vintage_year,
                "program": a.representative_footprint.program,
                "distance_to_center": a.distance_to_center,
            });
            write_json(&dir.join(format!("{id}.json")), &sidecar)?;
            writeln!(areas, "{},{},{}", id, a.use_class.as_str(), a.cluster_total_area_m2).expect("string write");
        }
        write_json(&dir.join("archetypes.json"), &all)?;
        write_atomic(&dir.join("areas.csv"), areas.as_bytes())?;
        write_json(&dir.join("summary.json"), &json!({ "archetypes": all.len(), "empty_clusters": empty }))?;
        self.log("selected archetypes", json!({ "archetypes": all.len() }));
        Ok(())
    }

    /// Runs the evaluation, writes `report.json` and prints it to stdout.
    pub fn evaluate(&self) -> CliResult<Value> {
        let e = &self.cfg.energy;
        let mut inputs: BTreeMap<String, String> = BTreeMap::new();
        let mut read = |path: &Path| -> CliResult<String> {
            let bytes = read_bytes(path)?;
            inputs.insert(path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()), sha256_hex(&bytes));
            String::from_utf8(bytes).map_err(|_| MarlError::Parse(format!("{} is not UTF-8", path.display())).into())
        };

        let areas_path = match &e.archetype_areas {
            Some(p) => self.require(p.clone())?,
            None => self.artifact("archetypes", "areas.csv")?,
        };
        let areas = ArchetypeArea::from_csv_str(&read(&areas_path)?)?;

        let (table, source) = match e.eui_source {
            EuiSourceKind::ExternalTable => {
                let path = self.require(e.eui_table.clone().expect("validated"))?;
                (EuiTable::from_csv_str(&read(&path)?)?, EuiSource::ExternalTable)
            }
            EuiSourceKind::Surrogate => {
                let path = self.artifact("archetypes", "archetypes.json")?;
                let archetypes: Vec<Archetype> =
                    serde_json::from_str(&read(&path)?).map_err(|err| MarlError::Parse(format!("{}: {err}", path.display())))?;
                (EuiTable::surrogate(&archetypes)?, EuiSource::Surrogate)
            }
        };

        let gt = match &e.ground_truth {
            GroundTruth::Value(v) => *v,
            GroundTruth::Source(s) if s == "synthetic" => {
                let path = self.artifact("ingest", "records.geojson")?;
                read(&path)?;
                synthetic_ground_truth(&self.load_records()?)?
            }
            GroundTruth::Source(s) => {
                let path = self.require(PathBuf::from(s))?;
                parse_ground_truth(&read(&path)?)?
            }
        };
        drop(read);

        let report = build_report(&areas, &table as &dyn EuiProvider, source, gt, e.baseline_eui.as_ref())?;
        let out = json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "inputs": inputs,
            "report": report,
        });
        let dir = self.stage_dir()?;
        write_atomic(&dir.join("eui_table.csv"), table.to_csv_string()?.as_bytes())?;
        write_json(&dir.join("report.json"), &out)?;
        println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
        self.log("evaluated", json!({ "accuracy_pct": report.accuracy_pct, "ec_est_kwh": report.ec_est_kwh }));
        Ok(out)
    }

    fn plot(&self) -> CliResult<()> {
        let dir = self.stage_dir()?;
        let (w, h) = (640, 400);

        let loss_path = self.artifact("train", "loss_history.csv")?;
        let losses = read_history(&loss_path)?;
        let series: Vec<(f64, f64)> = losses.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect();
        write_atomic(&dir.join("loss.png"), &plot::line_chart_png(&[series], w, h)?)?;

        let models = self.load_class_models()?;
        for m in &models {
            let path = self.artifact("cluster", &format!("wcss_{}.csv", m.use_class.as_str()))?;
            let curve = read_xy(&path)?;
            write_atomic(&dir.join(format!("wcss_{}.png", m.use_class.as_str())), &plot::line_chart_png(&[curve], w, h)?)?;
        }

        let model = self.load_model()?;
        let images = self.load_images()?;
        let shown: Vec<&MultiScaleImage> = images.iter().take(PREVIEW_COUNT).collect();
        if !shown.is_empty() {
            let x = model.batch(&shown)?;
            let (_, x_hat) = model.reconstruct(&x)?;
            let side = model.config.side_px;
            let plane = side * side;
            let mut tiles = Vec::new();
            for (b, img) in shown.iter().enumerate() {
                for c in 0..3 {
                    tiles.push(img.channel(c).to_vec());
                }
                let start = b * 3 * plane;
                for c in 0..3 {
                    tiles.push(x_hat.data()[start + c * plane..start + (c + 1) * plane].to_vec());
                }
            }
            write_atomic(&dir.join("reconstructions.png"), &plot::image_grid_png(&tiles, side, 6)?)?;
        }

        let latents = self.load_latents()?;
        let row_of: BTreeMap<&str, usize> = latents.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut group = vec![usize::MAX; latents.rows()];
        let mut offset = 0;
        for m in &models {
            for (id, &a) in m.ids.iter().zip(&m.model.assignments) {
                if let Some(&r) = row_of.get(id.as_str()) {
                    group[r] = offset + a;
                }
            }
            offset += m.model.k;
        }
        let keep: Vec<usize> = (0..group.len()).filter(|&i| group[i] != usize::MAX).collect();
        if keep.len() >= 3 {
            let sub = latents.select(&keep)?;
            let (proj, _) = sub.reduce_pca(2)?;
            let points: Vec<(f64, f64)> =
                (0..proj.rows()).map(|i| (proj.row(i)[0], proj.row(i).get(1).copied().unwrap_or(0.0))).collect();
            let groups: Vec<usize> = keep.iter().map(|&i| group[i]).collect();
            write_atomic(&dir.join("latent_scatter.png"), &plot::scatter_png(&points, &groups, w, h)?)?;
        }
        self.log("plotted", json!({ "classes": models.len() }));
        Ok(())
    }
}

/// Cluster model for one class plus the ids of its rows, in row order.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassModelFile {
    use_class: UseClass,
    ids: Vec<String>,
    model: ClusterModel,
}

fn class_counts(records: &[FootprintRecord]) -> BTreeMap<&'static str, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.use_class.as_str()).or_insert(0) += 1;
    }
    m
}

fn history_csv(history: &[(&str, LossBreakdown)]) -> String {
    let mut s = String::from("epoch,phase,reconstruction,codebook,commitment,dtp,total\n");
    for (i, (phase, l)) in history.iter().enumerate() {
        writeln!(s, "{i},{phase},{},{},{},{},{}", l.reconstruction, l.codebook, l.commitment, l.dtp_total, l.weighted_total)
            .expect("string write");
    }
    s
}

fn csv_reader(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| MarlError::Parse(format!("{}: {e}", path.display())).into())
}

fn read_history(path: &Path) -> CliResult<Vec<f64>> {
    let mut rdr = csv_reader(path)?;
    let col = rdr
        .headers()
        .map_err(|e| MarlError::Parse(e.to_string()))?
        .iter()
        .position(|h| h == "reconstruction")
        .ok_or_else(|| MarlError::Parse(format!("{} has no reconstruction column", path.display())))?;
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| MarlError::Parse(e.to_string()))?;
            r.get(col).and_then(|v| v.parse().ok()).ok_or_else(|| MarlError::Parse(format!("bad row in {}", path.display())).into())
        })
        .collect()
}

fn read_xy(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let mut rdr = csv_reader(path)?;
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| MarlError::Parse(e.to_string()))?;
            match (r.get(0).and_then(|v| v.parse().ok()), r.get(1).and_then(|v| v.parse().ok())) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => Err(MarlError::Parse(format!("bad row in {}", path.display())).into()),
            }
        })
        .collect()
}

/// A bare JSON number, or a CSV whose `kwh` column is summed.
fn parse_ground_truth(text: &str) -> CliResult<f64> {
    if let Ok(v) = serde_json::from_str::<f64>(text.trim()) {
        return Ok(v);
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let col = rdr
        .headers()
        .map_err(|e| MarlError::Parse(e.to_string()))?
        .iter()
        .position(|h| h == "kwh")
        .ok_or_else(|| MarlError::Parse("ground truth CSV needs a kwh column".into()))?;
    let mut total = 0.0;
    for r in rdr.records() {
        let r = r.map_err(|e| MarlError::Parse(e.to_string()))?;
        total += r.get(col).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| MarlError::Parse("bad kwh value".into()))?;
    }
    Ok(total)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").expect("string write");
        s
    })
}
