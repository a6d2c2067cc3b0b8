//! On-disk checkpoints: `manifest.json` plus `weights.bin`.
//!
//! `weights.bin` holds every tensor as little-endian `f32`, row-major,
//! concatenated in manifest order. The manifest records each tensor's
//! extent, the run configuration and a SHA-256 of the blob.

use std::fs;
use std::path::Path;

use autograd::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Mode, Stage, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ParamStore;
use crate::schedule::NoiseSchedule;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `weights.bin`.
    pub offset: u64,
    /// Byte length.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    tensors: Vec<TensorRecord>,
    config: CheckpointConfig,
    schedule: Option<NoiseSchedule>,
    seed: u64,
    stage: Stage,
    mode: Option<Mode>,
    step: u64,
    checksum: String,
}

/// Trained weights plus everything needed to resume or evaluate them.
///
/// Weights are held at `f32` precision so that the in-memory and on-disk
/// forms are interchangeable.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub config: CheckpointConfig,
    pub schedule: Option<NoiseSchedule>,
    pub seed: u64,
    pub stage: Stage,
    pub mode: Option<Mode>,
    pub step: u64,
}

pub fn round_to_f32(params: &ParamStore) -> ParamStore {
    let mut out = params.clone();
    for (_, t) in out.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(
        params: &ParamStore,
        config: CheckpointConfig,
        schedule: Option<NoiseSchedule>,
        step: u64,
    ) -> Self {
        Self {
            params: round_to_f32(params),
            seed: config.train.seed,
            stage: config.train.stage,
            mode: config.train.mode,
            schedule,
            config,
            step,
        }
    }

    fn encode(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut blob = Vec::with_capacity(self.params.num_scalars() * 4);
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.iter() {
            let offset = blob.len() as u64;
            for v in t.data() {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            tensors.push(TensorRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                length: blob.len() as u64 - offset,
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            tensors,
            config: self.config.clone(),
            schedule: self.schedule.clone(),
            seed: self.seed,
            stage: self.stage,
            mode: self.mode,
            step: self.step,
            checksum: format!("sha256:{}", sha256_hex(&blob)),
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        Ok((json, blob))
    }

    /// Writes the checkpoint directory, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let (json, blob) = self.encode()?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join(WEIGHTS_FILE), blob)?;
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    /// Reads and verifies a checkpoint directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let raw = fs::read(dir.join(MANIFEST_FILE))?;
        let value: serde_json::Value = serde_json::from_slice(&raw)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MANIFEST_VERSION as u64 => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unsupported manifest version {other:?} (expected {MANIFEST_VERSION})"
                )))
            }
        }
        let manifest: Manifest = serde_json::from_value(value)?;
        let blob = fs::read(dir.join(WEIGHTS_FILE))?;
        let actual = format!("sha256:{}", sha256_hex(&blob));
        if actual != manifest.checksum {
            return Err(Error::Checksum {
                expected: manifest.checksum,
                actual,
            });
        }
        let mut params = ParamStore::new();
        for rec in &manifest.tensors {
            if rec.dtype != "f32" {
                return Err(Error::Checkpoint(format!("tensor `{}` has dtype {}", rec.name, rec.dtype)));
            }
            let numel: usize = rec.shape.iter().product();
            let end = rec.offset.checked_add(rec.length);
            if rec.length != 4 * numel as u64 || end.is_none_or(|e| e > blob.len() as u64) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` extent {}+{} invalid for shape {:?} in {}-byte blob",
                    rec.name,
                    rec.offset,
                    rec.length,
                    rec.shape,
                    blob.len()
                )));
            }
            let bytes = &blob[rec.offset as usize..(rec.offset + rec.length) as usize];
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            params.insert(rec.name.clone(), Tensor::new(&rec.shape, data));
        }
        Ok(Self {
            params,
            config: manifest.config,
            schedule: manifest.schedule,
            seed: manifest.seed,
            stage: manifest.stage,
            mode: manifest.mode,
            step: manifest.step,
        })
    }
}
