//! Single-file checkpoint.
//!
//! ```text
//! magic     8 bytes  "LAYDIFF\0"
//! version   u32 LE
//! hlen      u64 LE   length of the JSON header
//! header    hlen bytes of UTF-8 JSON
//! blob      concatenated little-endian f32 parameter data
//! ```
//!
//! The header holds the model config, the vocabulary, the schedule
//! constants, the training config, the final EMA loss and a tensor manifest
//! of `{name, shape, offset, len}` entries, where offset and len count bytes
//! into the blob.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::config::{DenoiserConfig, TrainConfig};
use super::network::DenoiserNet;
use crate::diffusion::{DiffusionSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::quantizer::Vocabulary;

pub const MAGIC: &[u8; 8] = b"LAYDIFF\0";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub net: DenoiserNet,
    pub vocab: Vocabulary,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub ema_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: DenoiserConfig,
    vocab: serde_json::Value,
    schedule: ScheduleConfig,
    train: TrainConfig,
    ema_loss: Option<f64>,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptFile(msg.into())
}

impl Checkpoint {
    pub fn diffusion_schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::for_vocab(&self.schedule, &self.vocab)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut tensors = Vec::new();
        for (name, var) in self.net.params() {
            let data: Vec<f32> = var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
            let offset = blob.len();
            for v in &data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: var.dims().to_vec(),
                offset,
                len: blob.len() - offset,
            });
        }
        let header = Header {
            model: self.net.config().clone(),
            vocab: serde_json::from_str(&self.vocab.to_json()?)?,
            schedule: self.schedule,
            train: self.train.clone(),
            ema_loss: self.ema_loss.is_finite().then_some(self.ema_loss),
            tensors,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(corrupt("file shorter than the fixed preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| corrupt(format!("header: {e}")))?;
        let blob = &body[hlen..];
        let expected: usize = header.tensors.iter().map(|t| t.len).sum();
        if blob.len() != expected {
            return Err(corrupt(format!(
                "parameter blob has {} bytes, manifest says {expected}",
                blob.len()
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if entry.len != 4 * n || entry.offset + entry.len > blob.len() {
                return Err(corrupt(format!("tensor {} has inconsistent extent", entry.name)));
            }
            let data: Vec<f32> = blob[entry.offset..entry.offset + entry.len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::from_vec(data, entry.shape.as_slice(), &Device::Cpu)?;
            tensors.push((entry.name.clone(), t));
        }
        let vocab = Vocabulary::from_json(&header.vocab.to_string())
            .map_err(|e| corrupt(format!("vocabulary: {e}")))?;
        let net = DenoiserNet::from_tensors(header.model, DType::F32, tensors)
            .map_err(|e| corrupt(format!("parameters: {e}")))?;
        Ok(Checkpoint {
            net,
            vocab,
            schedule: header.schedule,
            train: header.train,
            ema_loss: header.ema_loss.unwrap_or(f64::NAN),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
