//! Checkpoint container: a JSON header describing named sections followed by
//! every parameter as little-endian `f32`, in declaration order.

use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::param::Parameter;
use crate::error::{MarlError, Result};
use crate::io;

pub const CHECKPOINT_FORMAT: &str = "marl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f32` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionHeader {
    pub name: String,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub metadata: serde_json::Value,
    pub sections: Vec<SectionHeader>,
}

/// One named group of parameters handed to [`encode_checkpoint`].
pub struct SectionRef<'a> {
    pub name: &'a str,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<&'a Parameter<f32>>,
}

pub fn encode_checkpoint(seed: u64, metadata: serde_json::Value, sections: &[SectionRef<'_>]) -> Result<Vec<u8>> {
    let mut values = Vec::new();
    let mut headers = Vec::with_capacity(sections.len());
    for s in sections {
        let params = s
            .params
            .iter()
            .map(|p| {
                let entry = ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    offset: values.len(),
                };
                values.extend_from_slice(p.value.data());
                entry
            })
            .collect();
        headers.push(SectionHeader {
            name: s.name.to_string(),
            layers: s.layers.clone(),
            params,
        });
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        seed,
        metadata,
        sections: headers,
    };
    io::encode_container(&header, &values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<f32>,
}

impl Checkpoint {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, values): (CheckpointHeader, Vec<f32>) = io::decode_container(bytes)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(MarlError::Parse(format!("not a checkpoint: format {:?}", header.format)));
        }
        for s in &header.sections {
            for p in &s.params {
                let n: usize = p.shape.iter().product();
                if p.offset + n > values.len() {
                    return Err(MarlError::Parse(format!("parameter {} exceeds blob", p.name)));
                }
            }
        }
        Ok(Checkpoint { header, values })
    }

    pub fn section(&self, name: &str) -> Result<&SectionHeader> {
        self.header
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| MarlError::Parse(format!("checkpoint has no section {name:?}")))
    }

    /// Copies a section's stored values into `params`, matched by position.
    pub fn load_into(&self, section: &str, params: Vec<&mut Parameter<f32>>) -> Result<()> {
        let s = self.section(section)?;
        if s.params.len() != params.len() {
            return Err(MarlError::dimension(
                format!("checkpoint section {section}"),
                params.len(),
                s.params.len(),
            ));
        }
        for (entry, p) in s.params.iter().zip(params) {
            if entry.shape != p.value.shape() {
                return Err(MarlError::dimension(
                    format!("checkpoint parameter {}", entry.name),
                    format!("{:?}", p.value.shape()),
                    format!("{:?}", entry.shape),
                ));
            }
            let n = p.len();
            p.value
                .data_mut()
                .copy_from_slice(&self.values[entry.offset..entry.offset + n]);
            p.zero_grad();
        }
        Ok(())
    }
}
