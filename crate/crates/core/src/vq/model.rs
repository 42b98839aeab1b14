use serde::{Deserialize, Serialize};

use super::quantizer::{quantize, Codebook, LatentCode, Quantized};
use crate::error::{MarlError, Result};
use crate::exec::Execution;
use crate::ingest::MultiScaleImage;
use crate::nn::{
    encode_checkpoint, seeded_rng, Array, Checkpoint, LayerSpec, Parameter, SectionRef, Sequential,
};

/// Architecture hyperparameters of the autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqConfig {
    pub side_px: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub beta: f64,
    /// Output channels of the two stride-2 encoder convolutions.
    pub encoder_channels: [usize; 2],
    /// Output channels of the two 2× upsampling stages.
    pub decoder_channels: [usize; 2],
    pub residual_hidden: usize,
    pub seed: u64,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig {
            side_px: 112,
            codebook_size: 512,
            latent_dim: 32,
            beta: 0.25,
            encoder_channels: [32, 64],
            decoder_channels: [32, 16],
            residual_hidden: 32,
            seed: 0,
        }
    }
}

impl VqConfig {
    pub fn latent_side(&self) -> usize {
        self.side_px / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.side_px == 0 || self.side_px % 4 != 0 {
            return Err(MarlError::Config(format!("side_px {} must be a positive multiple of 4", self.side_px)));
        }
        if self.codebook_size < 2 || self.latent_dim == 0 {
            return Err(MarlError::Config("codebook_size ≥ 2 and latent_dim ≥ 1 required".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(MarlError::Config("beta must be non-negative".into()));
        }
        Ok(())
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let [c1, c2] = self.encoder_channels;
        vec![
            LayerSpec::Conv2d { in_channels: 3, out_channels: c1, kernel: 4, stride: 2, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv2d { in_channels: c1, out_channels: c2, kernel: 4, stride: 2, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv2d { in_channels: c2, out_channels: self.latent_dim, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::ResidualBlock { channels: self.latent_dim, hidden: self.residual_hidden },
        ]
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let [c1, c2] = self.decoder_channels;
        vec![
            LayerSpec::ResidualBlock { channels: self.latent_dim, hidden: self.residual_hidden },
            LayerSpec::Relu,
            LayerSpec::TransposedUpsample2d { in_channels: self.latent_dim, out_channels: c1, kernel: 3 },
            LayerSpec::Relu,
            LayerSpec::TransposedUpsample2d { in_channels: c1, out_channels: c2, kernel: 3 },
            LayerSpec::Relu,
            LayerSpec::Conv2d { in_channels: c2, out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Sigmoid,
        ]
    }
}

/// Encoder → vector quantizer → decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct VqAutoencoder {
    pub config: VqConfig,
    pub encoder: Sequential<f32>,
    pub codebook: Codebook,
    pub decoder: Sequential<f32>,
}

impl VqAutoencoder {
    pub fn new(config: VqConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed, 0);
        let encoder = Sequential::from_specs("encoder", &config.encoder_specs(), &mut rng)?;
        let codebook = Codebook::new(config.codebook_size, config.latent_dim, &mut rng)?;
        let decoder = Sequential::from_specs("decoder", &config.decoder_specs(), &mut rng)?;
        Ok(VqAutoencoder { config, encoder, codebook, decoder })
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.encoder.exec = exec;
        self.decoder.exec = exec;
    }

    pub fn params(&self) -> Vec<&Parameter<f32>> {
        let mut p = self.encoder.params();
        p.push(&self.codebook.embeddings);
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        let mut p = self.encoder.params_mut();
        p.push(&mut self.codebook.embeddings);
        p.extend(self.decoder.params_mut());
        p
    }

    /// Stacks images into an `(n, 3, side, side)` batch.
    pub fn batch(&self, images: &[&MultiScaleImage]) -> Result<Array<f32>> {
        let side = self.config.side_px;
        let mut data = Vec::with_capacity(images.len() * 3 * side * side);
        for img in images {
            if img.side() != side {
                return Err(MarlError::dimension(format!("image {}", img.source_id), side, img.side()));
            }
            data.extend_from_slice(img.data());
        }
        Array::new(vec![images.len(), 3, side, side], data)
    }

    pub fn encode_batch(&self, x: &Array<f32>) -> Result<Array<f32>> {
        let (_, c, h, w) = x.dims4("encode input")?;
        let side = self.config.side_px;
        if c != 3 || h != side || w != side {
            return Err(MarlError::dimension("encode input", format!("[n, 3, {side}, {side}]"), format!("{:?}", x.shape())));
        }
        self.encoder.infer(x)
    }

    /// `z_e` for one image, shape `(1, D, side/4, side/4)`.
    pub fn encode(&self, image: &MultiScaleImage) -> Result<Array<f32>> {
        self.encode_batch(&self.batch(&[image])?)
    }

    pub fn quantize(&self, z_e: &Array<f32>) -> Result<Quantized<f32>> {
        quantize(z_e, &self.codebook.embeddings.value)
    }

    pub fn decode(&self, z_q: &Array<f32>) -> Result<Array<f32>> {
        let (_, d, h, w) = z_q.dims4("decode input")?;
        let l = self.config.latent_side();
        if d != self.config.latent_dim || h != l || w != l {
            return Err(MarlError::dimension(
                "decode input",
                format!("[n, {}, {l}, {l}]", self.config.latent_dim),
                format!("{:?}", z_q.shape()),
            ));
        }
        self.decoder.infer(z_q)
    }

    /// Full encode → quantize → decode pass on a batch.
    pub fn reconstruct(&self, x: &Array<f32>) -> Result<(LatentCode<f32>, Array<f32>)> {
        let z_e = self.encode_batch(x)?;
        let q = self.quantize(&z_e)?;
        let x_hat = self.decode(&q.code.z_q)?;
        Ok((q.code, x_hat))
    }

    pub fn sections(&self) -> Vec<SectionRef<'_>> {
        vec![
            SectionRef { name: "encoder", layers: self.encoder.specs(), params: self.encoder.params() },
            SectionRef { name: "codebook", layers: vec![], params: vec![&self.codebook.embeddings] },
            SectionRef { name: "decoder", layers: self.decoder.specs(), params: self.decoder.params() },
        ]
    }

    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Result<Vec<u8>> {
        let meta = serde_json::json!({ "vq": self.config, "training": metadata });
        encode_checkpoint(self.config.seed, meta, &self.sections())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: VqConfig = serde_json::from_value(
            ckpt.header.metadata.get("vq").cloned().unwrap_or_default(),
        )
        .map_err(|e| MarlError::Parse(format!("checkpoint vq config: {e}")))?;
        let mut model = VqAutoencoder::new(config)?;
        if ckpt.section("encoder")?.layers != model.encoder.specs()
            || ckpt.section("decoder")?.layers != model.decoder.specs()
        {
            return Err(MarlError::Parse("checkpoint layer specs disagree with its config".into()));
        }
        ckpt.load_into("encoder", model.encoder.params_mut())?;
        ckpt.load_into("codebook", vec![&mut model.codebook.embeddings])?;
        ckpt.load_into("decoder", model.decoder.params_mut())?;
        Ok(model)
    }
}
