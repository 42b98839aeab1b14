use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::pca::Pca;
use crate::error::{MarlError, Result};
use crate::exec::Execution;
use crate::ingest::MultiScaleImage;
use crate::io;
use crate::vq::VqAutoencoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reduction {
    NoneFlatten,
    Pca { components: usize },
}

/// One row per record, in record order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    pub ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
    pub reduction: Reduction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LatentHeader {
    ids: Vec<String>,
    d: usize,
    reduction: Reduction,
}

impl LatentMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>, reduction: Reduction) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(MarlError::dimension("latent matrix", ids.len() * dim, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MarlError::Input("latent matrix contains non-finite values".into()));
        }
        let unique: HashSet<&str> = ids.iter().map(String::as_str).collect();
        if unique.len() != ids.len() {
            return Err(MarlError::Input("latent matrix row ids must be unique".into()));
        }
        Ok(LatentMatrix { ids, dim, data, reduction })
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows whose index is in `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> Result<Self> {
        let ids = keep.iter().map(|&i| self.ids[i].clone()).collect();
        let data = keep.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        LatentMatrix::new(ids, self.dim, data, self.reduction)
    }

    /// Projects onto the leading principal components fitted on these rows.
    pub fn reduce_pca(&self, components: usize) -> Result<(Self, Pca)> {
        let pca = Pca::fit(&self.data, self.rows(), self.dim, components)?;
        let data = pca.transform(&self.data)?;
        let m = LatentMatrix::new(
            self.ids.clone(),
            pca.n_components(),
            data,
            Reduction::Pca { components: pca.n_components() },
        )?;
        Ok((m, pca))
    }

    /// JSON header `{ids, d, reduction}` plus a little-endian `f32` blob.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = LatentHeader { ids: self.ids.clone(), d: self.dim, reduction: self.reduction };
        let values: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        io::encode_container(&header, &values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, values): (LatentHeader, Vec<f32>) = io::decode_container(bytes)?;
        LatentMatrix::new(h.ids, h.d, values.into_iter().map(f64::from).collect(), h.reduction)
    }
}

/// Flattened `z_e` of every image through the frozen encoder, optionally
/// PCA-reduced. Rows follow `images` order.
pub fn embed_dataset(model: &VqAutoencoder, images: &[MultiScaleImage], reduction: Reduction, exec: Execution) -> Result<LatentMatrix> {
    const CHUNK: usize = 16;
    let chunks: Vec<&[MultiScaleImage]> = images.chunks(CHUNK).collect();
    let encoded = exec.try_map(&chunks, |chunk| {
        let refs: Vec<&MultiScaleImage> = chunk.iter().collect();
        let z = model.encode_batch(&model.batch(&refs)?)?;
        Ok::<_, MarlError>(z.into_data())
    })?;
    let dim = model.config.latent_dim * model.config.latent_side() * model.config.latent_side();
    let data: Vec<f64> = encoded.into_iter().flatten().map(f64::from).collect();
    let ids = images.iter().map(|i| i.source_id.clone()).collect();
    let flat = LatentMatrix::new(ids, dim, data, Reduction::NoneFlatten)?;
    match reduction {
        Reduction::NoneFlatten => Ok(flat),
        Reduction::Pca { components } => Ok(flat.reduce_pca(components)?.0),
    }
}
