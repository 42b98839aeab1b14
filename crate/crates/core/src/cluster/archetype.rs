use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_best, sq_dist, ClusterModel, KMeansConfig, Points};
use super::latent::LatentMatrix;
use crate::error::{MarlError, Result};
use crate::exec::Execution;
use crate::ingest::{FootprintRecord, UseClass};

/// A real footprint standing in for one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub use_class: UseClass,
    pub cluster_index: usize,
    pub representative_id: String,
    pub representative_footprint: FootprintRecord,
    pub cluster_total_area_m2: f64,
    pub member_count: usize,
    pub distance_to_center: f64,
}

impl Archetype {
    pub fn id(&self) -> String {
        archetype_id(self.use_class, self.cluster_index)
    }
}

pub fn archetype_id(class: UseClass, cluster: usize) -> String {
    format!("{}-{cluster}", class.as_str())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeSelection {
    pub archetypes: Vec<Archetype>,
    pub empty_clusters: usize,
}

/// Per cluster, the member closest to its center (ties to the lowest record
/// id) and the summed member floor area. `records` must be row-aligned with
/// `latents`.
pub fn select_archetypes(model: &ClusterModel, latents: &LatentMatrix, records: &[FootprintRecord]) -> Result<ArchetypeSelection> {
    let n = latents.rows();
    if records.len() != n || model.assignments.len() != n {
        return Err(MarlError::dimension("archetype selection rows", n, records.len().min(model.assignments.len())));
    }
    if latents.dim != model.dim {
        return Err(MarlError::dimension("archetype selection width", model.dim, latents.dim));
    }
    for (r, id) in records.iter().zip(&latents.ids) {
        if &r.id != id {
            return Err(MarlError::Input(format!("record {} is not aligned with latent row {id}", r.id)));
        }
    }
    let mut best: Vec<Option<(usize, f64)>> = vec![None; model.k];
    let mut area = vec![0.0f64; model.k];
    let mut count = vec![0usize; model.k];
    for (i, &a) in model.assignments.iter().enumerate() {
        let d = sq_dist(latents.row(i), model.center(a));
        area[a] += records[i].area_m2;
        count[a] += 1;
        let better = match best[a] {
            None => true,
            Some((j, bd)) => d < bd || (d == bd && records[i].id < records[j].id),
        };
        if better {
            best[a] = Some((i, d));
        }
    }
    let mut archetypes = Vec::new();
    let mut empty_clusters = 0;
    for (j, b) in best.into_iter().enumerate() {
        let Some((i, d)) = b else {
            empty_clusters += 1;
            continue;
        };
        let rep = &records[i];
        archetypes.push(Archetype {
            use_class: rep.use_class,
            cluster_index: j,
            representative_id: rep.id.clone(),
            representative_footprint: rep.clone(),
            cluster_total_area_m2: area[j],
            member_count: count[j],
            distance_to_center: d.sqrt(),
        });
    }
    Ok(ArchetypeSelection { archetypes, empty_clusters })
}

/// Clustering result for one use class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassClustering {
    pub use_class: UseClass,
    pub latents: LatentMatrix,
    pub model: ClusterModel,
    pub selection: ArchetypeSelection,
}

/// Splits records by use class and clusters each class on its own, so no
/// cluster mixes classes. `k_for` maps a class and its latent rows to `k`.
pub fn cluster_by_class<F>(
    latents: &LatentMatrix,
    records: &[FootprintRecord],
    mut k_for: F,
    seed: u64,
    cfg: &KMeansConfig,
    exec: Execution,
) -> Result<Vec<ClassClustering>>
where
    F: FnMut(UseClass, &LatentMatrix) -> Result<usize>,
{
    if records.len() != latents.rows() {
        return Err(MarlError::dimension("records vs latents", latents.rows(), records.len()));
    }
    let mut groups: HashMap<UseClass, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.use_class).or_default().push(i);
    }
    let mut out = Vec::new();
    for class in [UseClass::Sfh, UseClass::Mfh, UseClass::Other] {
        let Some(rows) = groups.get(&class) else { continue };
        let sub = latents.select(rows)?;
        let sub_records: Vec<FootprintRecord> = rows.iter().map(|&i| records[i].clone()).collect();
        let k = k_for(class, &sub)?.min(sub.rows());
        let model = kmeans_best(Points::new(&sub.data, sub.dim)?, k, seed, cfg, exec)?;
        let selection = select_archetypes(&model, &sub, &sub_records)?;
        out.push(ClassClustering { use_class: class, latents: sub, model, selection });
    }
    Ok(out)
}
