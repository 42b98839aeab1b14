use rand::Rng;

use crate::error::{MarlError, Result};
use crate::nn::{Array, Parameter, Scalar};

/// `K × D` embedding table with per-entry usage counts from the latest epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub embeddings: Parameter<f32>,
    pub usage_counts: Vec<u64>,
}

impl Codebook {
    /// Entries uniform in `[-1/K, 1/K]`.
    pub fn new<R: Rng>(size: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if size < 2 || dim == 0 {
            return Err(MarlError::Config(format!("codebook needs K ≥ 2 and D ≥ 1 (got {size}×{dim})")));
        }
        Ok(Codebook {
            embeddings: Parameter::uniform("codebook.embeddings", &[size, dim], 1.0 / size as f64, rng),
            usage_counts: vec![0; size],
        })
    }

    pub fn from_entries(entries: Array<f32>) -> Result<Self> {
        let size = entries.shape()[0];
        if entries.shape().len() != 2 || size < 2 {
            return Err(MarlError::Config("codebook must be a K×D matrix with K ≥ 2".into()));
        }
        Ok(Codebook {
            embeddings: Parameter::new("codebook.embeddings", entries),
            usage_counts: vec![0; size],
        })
    }

    pub fn size(&self) -> usize {
        self.embeddings.value.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.embeddings.value.shape()[1]
    }

    pub fn entry(&self, k: usize) -> &[f32] {
        let d = self.dim();
        &self.embeddings.value.data()[k * d..(k + 1) * d]
    }
}

/// Encoder output, its quantized counterpart and the chosen code indices.
///
/// Arrays are `(n, D, H, W)`; `indices` is `(n, H, W)` flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T: Scalar = f32> {
    pub z_e: Array<T>,
    pub z_q: Array<T>,
    pub indices: Vec<usize>,
}

impl<T: Scalar> LatentCode<T> {
    /// `(H, W, D)` of one sample.
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let s = self.z_e.shape();
        (s[2], s[3], s[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized<T: Scalar = f32> {
    pub code: LatentCode<T>,
    /// Mean over sites of `‖sg(z_e) − e‖²`.
    pub codebook_loss: f64,
    /// Mean over sites of `‖z_e − sg(e)‖²`.
    pub commitment_loss: f64,
}

/// Nearest-entry quantization per spatial site; ties go to the lowest index.
pub fn quantize<T: Scalar>(z_e: &Array<T>, codebook: &Array<T>) -> Result<Quantized<T>> {
    let (n, d, h, w) = z_e.dims4("quantize input")?;
    let cb_shape = codebook.shape();
    if cb_shape.len() != 2 || cb_shape[0] == 0 {
        return Err(MarlError::Config("empty codebook".into()));
    }
    let k_total = cb_shape[0];
    if cb_shape[1] != d {
        return Err(MarlError::dimension("quantize codebook dim", d, cb_shape[1]));
    }
    let plane = h * w;
    let ze = z_e.data();
    let cb = codebook.data();
    let mut zq = vec![T::zero(); ze.len()];
    let mut indices = Vec::with_capacity(n * plane);
    let mut sq = Vec::with_capacity(n * plane);
    let mut site = vec![T::zero(); d];
    for s in 0..n {
        let base = s * d * plane;
        for p in 0..plane {
            for (c, v) in site.iter_mut().enumerate() {
                *v = ze[base + c * plane + p];
            }
            let mut best = 0;
            let mut best_dist = T::infinity();
            for k in 0..k_total {
                let e = &cb[k * d..(k + 1) * d];
                let dist: T = site.iter().zip(e).map(|(&a, &b)| (a - b) * (a - b)).sum();
                if dist < best_dist {
                    best_dist = dist;
                    best = k;
                }
            }
            let e = &cb[best * d..(best + 1) * d];
            let mut dist = 0.0f64;
            for c in 0..d {
                zq[base + c * plane + p] = e[c];
                let diff = (site[c] - e[c]).to_f64().unwrap();
                dist += diff * diff;
            }
            indices.push(best);
            sq.push(dist);
        }
    }
    let mean = crate::exec::pairwise_sum(&sq) / sq.len() as f64;
    Ok(Quantized {
        code: LatentCode {
            z_e: z_e.clone(),
            z_q: Array::new(z_e.shape().to_vec(), zq)?,
            indices,
        },
        codebook_loss: mean,
        commitment_loss: mean,
    })
}

/// Gradients of `task(z_q) + codebook + beta·commitment` given `dL/dz_q`.
///
/// Returns `(dL/dz_e, dL/dcodebook)`. The encoder gradient is the
/// straight-through copy of `dL/dz_q` plus the commitment term; only the
/// selected codebook rows receive a gradient.
pub fn quantizer_backward<T: Scalar>(
    q: &Quantized<T>,
    grad_zq: &Array<T>,
    codebook: &Array<T>,
    beta: f64,
) -> Result<(Array<T>, Array<T>)> {
    let z_e = &q.code.z_e;
    if grad_zq.shape() != z_e.shape() {
        return Err(MarlError::dimension("quantizer backward", format!("{:?}", z_e.shape()), format!("{:?}", grad_zq.shape())));
    }
    let (n, d, h, w) = z_e.dims4("quantizer backward")?;
    let plane = h * w;
    let sites = (n * plane) as f64;
    let scale_commit = T::from_f64_lossy(2.0 * beta / sites);
    let scale_cb = T::from_f64_lossy(2.0 / sites);
    let ze = z_e.data();
    let zq = q.code.z_q.data();
    let mut g_ze = grad_zq.data().to_vec();
    let mut g_cb = vec![T::zero(); codebook.len()];
    for s in 0..n {
        for p in 0..plane {
            let k = q.code.indices[s * plane + p];
            for c in 0..d {
                let i = s * d * plane + c * plane + p;
                let diff = ze[i] - zq[i];
                g_ze[i] += scale_commit * diff;
                g_cb[k * d + c] += -scale_cb * diff;
            }
        }
    }
    Ok((
        Array::new(z_e.shape().to_vec(), g_ze)?,
        Array::new(codebook.shape().to_vec(), g_cb)?,
    ))
}
