//! Binary checkpoints.
//!
//! Layout: the magic bytes `TBAC`, a little-endian `u32` format version, a
//! `u64` metadata length, UTF-8 JSON metadata, then every parameter as
//! little-endian `f64` in the order listed by the metadata index.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tripartite_core::Model;

use crate::config::ExperimentConfig;
use crate::error::AppError;
use crate::output::{EpochRecord, FORMAT_VERSION};

const MAGIC: &[u8; 4] = b"TBAC";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Index of the first value in the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub seed: u64,
    /// Resolved config text.
    pub config: String,
    /// Epochs completed.
    pub epoch: usize,
    pub metrics: Vec<EpochRecord>,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub epoch: usize,
    pub metrics: Vec<EpochRecord>,
    pub model: Model,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, AppError> {
        let mut params = Vec::new();
        let mut offset = 0;
        for (name, t) in self.model.params.iter() {
            params.push(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let meta = CheckpointMeta {
            format_version: FORMAT_VERSION,
            seed: self.config.train.seed,
            config: self.config.render(),
            epoch: self.epoch,
            metrics: self.metrics.clone(),
            params,
        };
        let json = serde_json::to_vec(&meta)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.model.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AppError> {
        let bad = |r: String| AppError::data(format!("checkpoint: {r}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing TBAC header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let blob_start = 16usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("metadata runs past end of file".into()))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..blob_start])?;
        let blob = &bytes[blob_start..];
        if blob.len() % 8 != 0 {
            return Err(bad(format!("parameter blob of {} bytes is not whole f64s", blob.len())));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let config = ExperimentConfig::parse(&meta.config)?;
        let mut model = Model::new(config.train.model.clone())?;
        if meta.params.len() != model.params.len() {
            return Err(bad(format!(
                "{} parameters stored, model has {}",
                meta.params.len(),
                model.params.len()
            )));
        }
        for entry in &meta.params {
            let id = model
                .params
                .find(&entry.name)
                .ok_or_else(|| bad(format!("unknown parameter `{}`", entry.name)))?;
            let expected = model.params.get(id).shape().to_vec();
            if expected != entry.shape {
                return Err(bad(format!(
                    "parameter `{}` has shape {:?}, model expects {expected:?}",
                    entry.name, entry.shape
                )));
            }
            let n: usize = entry.shape.iter().product();
            let data = values
                .get(entry.offset..entry.offset + n)
                .ok_or_else(|| bad(format!("parameter `{}` runs past end of blob", entry.name)))?;
            model.params.get_mut(id).data_mut().copy_from_slice(data);
        }
        Ok(Checkpoint {
            config,
            epoch: meta.epoch,
            metrics: meta.metrics,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AppError> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| AppError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| AppError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
