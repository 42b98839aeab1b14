use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::VqAutoencoder;
use super::quantizer::quantizer_backward;
use crate::error::{MarlError, Result};
use crate::ingest::MultiScaleImage;
use crate::nn::{mse, seeded_rng, Adam, AdamConfig, Array, Parameter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Reseed codebook entries that went unused for a whole epoch.
    pub reseed_dead_codes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            reseed_dead_codes: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }
}

/// Loss components averaged over the samples of one epoch (or one batch).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub dtp_total: f64,
    pub weighted_total: f64,
}

impl LossBreakdown {
    /// `reconstruction + codebook + beta·commitment + dtp_total`
    pub fn assemble(reconstruction: f64, codebook: f64, commitment: f64, dtp_total: f64, beta: f64) -> Self {
        LossBreakdown {
            reconstruction,
            codebook,
            commitment,
            dtp_total,
            weighted_total: reconstruction + codebook + beta * commitment + dtp_total,
        }
    }

    fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.reconstruction += weight * other.reconstruction;
        self.codebook += weight * other.codebook;
        self.commitment += weight * other.commitment;
        self.dtp_total += weight * other.dtp_total;
        self.weighted_total += weight * other.weighted_total;
    }

    fn is_finite(&self) -> bool {
        [self.reconstruction, self.codebook, self.commitment, self.dtp_total, self.weighted_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Extra objective attached to the encoder output during training.
pub trait AuxiliaryObjective {
    /// Weighted loss and its gradient with respect to `z_e` for the samples
    /// `batch` (indices into the training set). Parameter gradients are
    /// accumulated internally.
    fn loss_and_grad(&mut self, batch: &[usize], z_e: &Array<f32>) -> Result<(f64, Array<f32>)>;

    fn params_mut(&mut self) -> Vec<&mut Parameter<f32>>;
}

/// One optimizer step on a batch. Gradients are zeroed first.
pub fn train_step(
    model: &mut VqAutoencoder,
    mut aux: Option<&mut (dyn AuxiliaryObjective + '_)>,
    x: &Array<f32>,
    batch: &[usize],
    adam: &mut Adam<f32>,
    epoch: usize,
) -> Result<(LossBreakdown, Array<f32>, Vec<usize>)> {
    for p in model.params_mut() {
        p.zero_grad();
    }
    if let Some(a) = aux.as_deref_mut() {
        for p in a.params_mut() {
            p.zero_grad();
        }
    }
    let beta = model.config.beta;
    let (z_e, tape_e) = model.encoder.forward(x)?;
    let q = model.quantize(&z_e)?;
    let (x_hat, tape_d) = model.decoder.forward(&q.code.z_q)?;
    let (rec, g_xhat) = mse(x, &x_hat)?;
    let g_zq = model.decoder.backward(&tape_d, &g_xhat)?;
    let (mut g_ze, g_cb) = quantizer_backward(&q, &g_zq, &model.codebook.embeddings.value, beta)?;

    let mut dtp = 0.0;
    if let Some(a) = aux.as_deref_mut() {
        let (loss, g) = a.loss_and_grad(batch, &z_e)?;
        dtp = loss;
        for (acc, v) in g_ze.data_mut().iter_mut().zip(g.data()) {
            *acc += *v;
        }
    }
    model.encoder.backward(&tape_e, &g_ze)?;
    for (acc, v) in model.codebook.embeddings.grad.data_mut().iter_mut().zip(g_cb.data()) {
        *acc += *v;
    }

    let losses = LossBreakdown::assemble(rec, q.codebook_loss, q.commitment_loss, dtp, beta);
    if !losses.is_finite() || !x_hat.all_finite() {
        return Err(MarlError::TrainingDiverged { epoch, detail: "non-finite loss".into() });
    }

    let mut params = model.params_mut();
    if let Some(a) = aux {
        params.extend(a.params_mut());
    }
    adam.step(&mut params, epoch)?;
    Ok((losses, q.code.z_e, q.code.indices))
}

/// Runs one shuffled pass over `images`; returns sample-weighted mean losses.
pub fn run_epoch(
    model: &mut VqAutoencoder,
    mut aux: Option<&mut (dyn AuxiliaryObjective + '_)>,
    images: &[MultiScaleImage],
    cfg: &TrainConfig,
    epoch: usize,
    adam: &mut Adam<f32>,
) -> Result<LossBreakdown> {
    if images.is_empty() {
        return Err(MarlError::Input("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut seeded_rng(cfg.seed, 1_000 + epoch as u64));

    let k = model.codebook.size();
    let mut usage = vec![0u64; k];
    let mut totals = LossBreakdown::default();
    let mut last_z_e = None;
    for chunk in order.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&MultiScaleImage> = chunk.iter().map(|&i| &images[i]).collect();
        let x = model.batch(&refs)?;
        let (losses, z_e, indices) = train_step(model, aux.as_deref_mut(), &x, chunk, adam, epoch)?;
        for i in indices {
            usage[i] += 1;
        }
        totals.accumulate(&losses, chunk.len() as f64 / images.len() as f64);
        last_z_e = Some(z_e);
    }

    if cfg.reseed_dead_codes {
        if let Some(z_e) = last_z_e {
            reseed_dead_codes(model, &usage, &z_e, &mut seeded_rng(cfg.seed, 2_000 + epoch as u64))?;
        }
    }
    model.codebook.usage_counts = usage;
    Ok(totals)
}

/// Replaces every unused entry with a randomly chosen encoder output site.
fn reseed_dead_codes<R: Rng>(model: &mut VqAutoencoder, usage: &[u64], z_e: &Array<f32>, rng: &mut R) -> Result<()> {
    let (n, d, h, w) = z_e.dims4("reseed")?;
    let plane = h * w;
    let src = z_e.data();
    let table = model.codebook.embeddings.value.data_mut();
    for (k, _) in usage.iter().enumerate().filter(|(_, &c)| c == 0) {
        let site = rng.gen_range(0..n * plane);
        let (s, p) = (site / plane, site % plane);
        for c in 0..d {
            table[k * d + c] = src[s * d * plane + c * plane + p];
        }
    }
    Ok(())
}

/// Reconstruction-only training. Returns per-epoch mean losses.
pub fn pretrain(model: &mut VqAutoencoder, images: &[MultiScaleImage], cfg: &TrainConfig) -> Result<Vec<LossBreakdown>> {
    if images.is_empty() {
        return Err(MarlError::Input("pretrain needs a non-empty dataset".into()));
    }
    let mut adam = Adam::new(cfg.adam());
    (0..cfg.epochs)
        .map(|epoch| run_epoch(model, None, images, cfg, epoch, &mut adam))
        .collect()
}

/// Losses of the current model on one batch without updating anything.
pub fn evaluate_batch(model: &VqAutoencoder, x: &Array<f32>) -> Result<LossBreakdown> {
    let (code, x_hat) = model.reconstruct(x)?;
    let (rec, _) = mse(x, &x_hat)?;
    let q = model.quantize(&code.z_e)?;
    Ok(LossBreakdown::assemble(rec, q.codebook_loss, q.commitment_loss, 0.0, model.config.beta))
}

/// Per-epoch CSV: `epoch,reconstruction,codebook,commitment,total`.
pub fn loss_history_csv(history: &[LossBreakdown]) -> String {
    let mut s = String::from("epoch,reconstruction,codebook,commitment,total\n");
    for (i, l) in history.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            i, l.reconstruction, l.codebook, l.commitment, l.weighted_total
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vq::VqConfig;

    fn tiny_model() -> VqAutoencoder {
        VqAutoencoder::new(VqConfig {
            side_px: 16,
            codebook_size: 8,
            latent_dim: 4,
            encoder_channels: [4, 4],
            decoder_channels: [4, 4],
            residual_hidden: 4,
            seed: 11,
            ..VqConfig::default()
        })
        .unwrap()
    }

    fn images(n: usize) -> Vec<MultiScaleImage> {
        (0..n)
            .map(|i| {
                let data = (0..3 * 256).map(|p| if (p + i) % 5 == 0 { 0.8 } else { 0.1 }).collect();
                MultiScaleImage::from_channels(16, data, format!("i{i}")).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut m = tiny_model();
        let before = m.clone();
        let hist = pretrain(&mut m, &images(4), &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert!(hist.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut m = tiny_model();
        assert!(pretrain(&mut m, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn identical_seeds_identical_histories() {
        let cfg = TrainConfig { epochs: 3, batch_size: 3, seed: 5, ..TrainConfig::default() };
        let data = images(7);
        let mut a = tiny_model();
        let mut b = tiny_model();
        let ha = pretrain(&mut a, &data, &cfg).unwrap();
        let hb = pretrain(&mut b, &data, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn weighted_total_is_the_configured_sum() {
        let l = LossBreakdown::assemble(0.5, 0.2, 0.4, 1.0, 0.25);
        assert_eq!(l.weighted_total, 0.5 + 0.2 + 0.1 + 1.0);
    }
}
