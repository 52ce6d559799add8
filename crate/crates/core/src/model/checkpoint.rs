//! Versioned binary checkpoints.
//!
//! Layout: the 8 magic bytes `CAMDSCK1`, a little-endian `u64` byte length,
//! that many bytes of UTF-8 JSON metadata (configuration, iteration counter,
//! trainer state and an array manifest with names, shapes and byte
//! offsets), then every array as little-endian `f32` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{NormStats, Scalar, Tensor};
use crate::train::TrainConfig;

pub const CHECKPOINT_MAGIC_PREFIX: &[u8; 7] = b"CAMDSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormSnapshot {
    pub name: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub initialized: bool,
}

/// Serializable ChaCha position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// `u128` word position, kept as a decimal string.
    pub word_pos: String,
}

/// Everything besides the weights needed to continue a run bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub train_config: TrainConfig,
    pub epoch: u64,
    pub cursor: usize,
    pub order: Vec<usize>,
    pub dataset_len: usize,
    pub rng: RngState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub iteration: u64,
    pub params: Vec<NamedArray>,
    /// Momentum buffers, parallel to `params`. Empty when no optimizer
    /// state was saved.
    pub momentum: Vec<NamedArray>,
    pub norms: Vec<NormSnapshot>,
    pub trainer: Option<TrainerState>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct NormMeta {
    name: String,
    initialized: bool,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    config: ModelConfig,
    config_hash: String,
    iteration: u64,
    trainer: Option<TrainerState>,
    norms: Vec<NormMeta>,
    arrays: Vec<ManifestEntry>,
}

pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::parse("checkpoint", format!("byte offset {offset}"), msg)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays: Vec<(&str, &[usize], &[f32], String)> = Vec::new();
        for p in &self.params {
            arrays.push((&p.name, &p.shape, &p.data, format!("param/{}", p.name)));
        }
        for m in &self.momentum {
            arrays.push((&m.name, &m.shape, &m.data, format!("momentum/{}", m.name)));
        }
        let mut norm_shapes = Vec::new();
        for n in &self.norms {
            norm_shapes.push([n.mean.len()]);
        }
        for (n, shape) in self.norms.iter().zip(&norm_shapes) {
            arrays.push((&n.name, shape, &n.mean, format!("norm/{}/mean", n.name)));
            arrays.push((&n.name, shape, &n.var, format!("norm/{}/var", n.name)));
        }
        let mut manifest = Vec::with_capacity(arrays.len());
        let mut offset = 0;
        for (_, shape, data, key) in &arrays {
            manifest.push(ManifestEntry {
                name: key.clone(),
                shape: shape.to_vec(),
                offset,
                len: data.len(),
            });
            offset += data.len() * 4;
        }
        let meta = Metadata {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            config_hash: config_hash(&self.config),
            iteration: self.iteration,
            trainer: self.trainer.clone(),
            norms: self
                .norms
                .iter()
                .map(|n| NormMeta {
                    name: n.name.clone(),
                    initialized: n.initialized,
                })
                .collect(),
            arrays: manifest,
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC_PREFIX);
        out.push(b'0' + CHECKPOINT_VERSION as u8);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data, _) in &arrays {
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..7] != CHECKPOINT_MAGIC_PREFIX {
            return Err(parse_err(0, "missing CAMDSCK magic bytes"));
        }
        let file_version = bytes[7].wrapping_sub(b'0') as u32;
        if file_version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: file_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len_bytes: [u8; 8] = bytes
            .get(8..16)
            .ok_or_else(|| parse_err(8, "truncated metadata length"))?
            .try_into()
            .expect("slice of length 8");
        let meta_len = u64::from_le_bytes(len_bytes) as usize;
        let meta_end = 16usize
            .checked_add(meta_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                parse_err(16, format!("metadata of {meta_len} bytes runs past end of file"))
            })?;
        let meta: Metadata = serde_json::from_slice(&bytes[16..meta_end])
            .map_err(|e| parse_err(16 + e.column(), format!("invalid metadata: {e}")))?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: meta.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if config_hash(&meta.config) != meta.config_hash {
            return Err(parse_err(16, "configuration hash does not match the embedded configuration"));
        }
        let data = &bytes[meta_end..];
        let mut expected_offset = 0;
        let mut arrays = Vec::with_capacity(meta.arrays.len());
        for entry in &meta.arrays {
            if entry.offset != expected_offset {
                return Err(parse_err(
                    meta_end + expected_offset,
                    format!("array {} has offset {}, expected {expected_offset}", entry.name, entry.offset),
                ));
            }
            if entry.shape.iter().product::<usize>() != entry.len {
                return Err(parse_err(meta_end + entry.offset, format!("array {} shape/length mismatch", entry.name)));
            }
            let end = entry.offset + entry.len * 4;
            let raw = data.get(entry.offset..end).ok_or_else(|| {
                parse_err(
                    meta_end + data.len(),
                    format!("truncated array data for {}: need bytes up to {}", entry.name, meta_end + end),
                )
            })?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            arrays.push((entry, values));
            expected_offset = end;
        }
        if expected_offset != data.len() {
            return Err(parse_err(
                meta_end + expected_offset,
                format!("{} trailing bytes after array data", data.len() - expected_offset),
            ));
        }

        let mut params = Vec::new();
        let mut momentum = Vec::new();
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for (entry, values) in arrays {
            let named = |prefix: &str| NamedArray {
                name: entry.name[prefix.len()..].to_string(),
                shape: entry.shape.clone(),
                data: values.clone(),
            };
            if entry.name.starts_with("param/") {
                params.push(named("param/"));
            } else if entry.name.starts_with("momentum/") {
                momentum.push(named("momentum/"));
            } else if let Some(rest) = entry.name.strip_prefix("norm/") {
                if let Some(layer) = rest.strip_suffix("/mean") {
                    means.push((layer.to_string(), values));
                } else if let Some(layer) = rest.strip_suffix("/var") {
                    vars.push((layer.to_string(), values));
                } else {
                    return Err(parse_err(16, format!("unknown array {}", entry.name)));
                }
            } else {
                return Err(parse_err(16, format!("unknown array {}", entry.name)));
            }
        }
        if means.len() != meta.norms.len() || vars.len() != meta.norms.len() {
            return Err(parse_err(16, "normalization statistics incomplete"));
        }
        let mut norms = Vec::with_capacity(meta.norms.len());
        for ((nm, (mname, mean)), (vname, var)) in meta.norms.iter().zip(means).zip(vars) {
            if nm.name != mname || nm.name != vname {
                return Err(parse_err(16, format!("normalization layer order mismatch at {}", nm.name)));
            }
            norms.push(NormSnapshot {
                name: nm.name.clone(),
                mean,
                var,
                initialized: nm.initialized,
            });
        }
        Ok(Checkpoint {
            config: meta.config,
            iteration: meta.iteration,
            params,
            momentum,
            norms,
            trainer: meta.trainer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn to_f32<F: Scalar>(values: &[F]) -> Vec<f32> {
    values.iter().map(|v| v.as_f64() as f32).collect()
}

impl<F: Scalar> Model<F> {
    /// Snapshot of weights and normalization statistics (no optimizer state).
    pub fn to_checkpoint(&self, iteration: u64) -> Checkpoint {
        Checkpoint {
            config: self.config().clone(),
            iteration,
            params: self
                .params()
                .iter()
                .map(|p| NamedArray {
                    name: p.name().to_string(),
                    shape: p.value.shape().to_vec(),
                    data: to_f32(p.value.data()),
                })
                .collect(),
            momentum: Vec::new(),
            norms: self
                .norm_layers()
                .iter()
                .map(|n| NormSnapshot {
                    name: n.name.clone(),
                    mean: to_f32(&n.stats.mean),
                    var: to_f32(&n.stats.var),
                    initialized: n.stats.initialized,
                })
                .collect(),
            trainer: None,
        }
    }

    /// Rebuilds a model from a checkpoint, checking that every parameter and
    /// normalization layer matches the architecture its configuration builds.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::<F>::build(ckpt.config.clone())?;
        if ckpt.params.len() != model.params().len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, architecture has {}",
                ckpt.params.len(),
                model.params().len()
            )));
        }
        for (p, saved) in model.params_mut().iter_mut().zip(&ckpt.params) {
            if p.name() != saved.name || p.value.shape() != saved.shape.as_slice() {
                return Err(Error::Config(format!(
                    "checkpoint parameter {} {:?} does not match {} {:?}",
                    saved.name,
                    saved.shape,
                    p.name(),
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(
                saved.shape.clone(),
                saved.data.iter().map(|&v| F::of(v as f64)).collect(),
            )?;
        }
        if ckpt.norms.len() != model.norm_layers().len() {
            return Err(Error::Config("checkpoint normalization layers do not match".into()));
        }
        for (layer, saved) in model.norm_layers_mut().iter_mut().zip(&ckpt.norms) {
            if layer.name != saved.name || layer.stats.mean.len() != saved.mean.len() {
                return Err(Error::Config(format!(
                    "checkpoint normalization layer {} does not match {}",
                    saved.name, layer.name
                )));
            }
            layer.stats = NormStats {
                mean: saved.mean.iter().map(|&v| F::of(v as f64)).collect(),
                var: saved.var.iter().map(|&v| F::of(v as f64)).collect(),
                initialized: saved.initialized,
            };
        }
        Ok(model)
    }
}
