//! Binary checkpoint container.
//!
//! Layout: 8-byte magic `HCVAE\0\0` + version byte, a little-endian
//! u32-length-prefixed UTF-8 JSON metadata block (config, taxonomy,
//! condition mode, training metadata), then a tensor table: u32 tensor
//! count, and per tensor a u32-length-prefixed name, u32 rank, u32 dims,
//! and the f32 little-endian payload. Everything about the encoding is
//! fixed so identical checkpoints are identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditionMode, Taxonomy};
use crate::error::{CheckpointError, Error, Result};
use crate::matrix::Matrix;
use crate::model::{ModelParams, VaeConfig};
use crate::training::Normalizer;

const MAGIC: [u8; 7] = *b"HCVAE\0\0";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub final_loss: Option<f32>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: VaeConfig,
    pub taxonomy: Taxonomy,
    pub mode: ConditionMode,
    pub params: ModelParams<f32>,
    pub normalizer: Normalizer,
    pub train_meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct MetadataDoc {
    config: VaeConfig,
    taxonomy: Taxonomy,
    mode: ConditionMode,
    train_meta: TrainMeta,
}

impl Checkpoint {
    /// Guard for consumers pinned to a particular conditioning variant.
    pub fn require_mode(&self, expected: ConditionMode) -> Result<()> {
        if self.mode != expected {
            return Err(Error::ModeMismatch {
                found: self.mode,
                expected,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&MetadataDoc {
            config: self.config.clone(),
            taxonomy: self.taxonomy.clone(),
            mode: self.mode,
            train_meta: self.train_meta.clone(),
        })
        .map_err(|e| CheckpointError::Metadata(e.to_string()))?;

        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);

        let layers = self.params.named_layers();
        let n_tensors = layers.len() * 2 + 2;
        out.extend_from_slice(&(n_tensors as u32).to_le_bytes());
        for (stem, layer) in &layers {
            write_tensor(
                &mut out,
                &format!("{stem}.w"),
                &[layer.weights.rows(), layer.weights.cols()],
                layer.weights.data(),
            );
            write_tensor(&mut out, &format!("{stem}.b"), &[layer.bias.len()], &layer.bias);
        }
        write_tensor(&mut out, "norm.mean", &[self.normalizer.mean.len()], &self.normalizer.mean);
        write_tensor(&mut out, "norm.std", &[self.normalizer.std.len()], &self.normalizer.std);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic[..7] != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        if magic[7] != VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: magic[7] }.into());
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_bytes = r.take(meta_len, "metadata")?;
        let meta: MetadataDoc = serde_json::from_slice(meta_bytes)
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        meta.config
            .validate()
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        if meta.taxonomy.cond_dim(meta.mode) != meta.config.cond_dim {
            return Err(CheckpointError::Metadata(format!(
                "taxonomy gives cond_dim {} under mode {}, config says {}",
                meta.taxonomy.cond_dim(meta.mode),
                meta.mode,
                meta.config.cond_dim
            ))
            .into());
        }

        let n_tensors = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = r.u32("tensor name length")? as usize;
            if name_len > 256 {
                return Err(CheckpointError::TensorTable(format!(
                    "tensor name length {name_len} out of range"
                ))
                .into());
            }
            let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec())
                .map_err(|e| CheckpointError::TensorTable(e.to_string()))?;
            let rank = r.u32("tensor rank")? as usize;
            if rank > 8 {
                return Err(
                    CheckpointError::TensorTable(format!("{name}: rank {rank} out of range")).into(),
                );
            }
            let mut dims = Vec::with_capacity(rank);
            let mut len = 1usize;
            for _ in 0..rank {
                let d = r.u32("tensor dim")? as usize;
                len = len.checked_mul(d).ok_or_else(|| {
                    CheckpointError::TensorTable(format!("{name}: dimension overflow"))
                })?;
                dims.push(d);
            }
            let raw = r.take(len.checked_mul(4).ok_or_else(|| {
                CheckpointError::TensorTable(format!("{name}: size overflow"))
            })?, "tensor data")?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, dims, data));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TensorTable(format!(
                "{} trailing bytes after tensor table",
                bytes.len() - r.pos
            ))
            .into());
        }

        assemble(meta, tensors)
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated { what })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn assemble(meta: MetadataDoc, tensors: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<Checkpoint> {
    let mut params: ModelParams<f32> = ModelParams::init(&meta.config, 0)
        .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    let mut lookup: std::collections::BTreeMap<String, (Vec<usize>, Vec<f32>)> = tensors
        .into_iter()
        .map(|(n, d, v)| (n, (d, v)))
        .collect();

    let mut take = |name: String, want_dims: Vec<usize>| -> Result<Vec<f32>> {
        let (dims, data) = lookup
            .remove(&name)
            .ok_or_else(|| CheckpointError::TensorTable(format!("missing tensor {name:?}")))?;
        if dims != want_dims {
            return Err(CheckpointError::TensorTable(format!(
                "tensor {name:?} has dims {dims:?}, model needs {want_dims:?}"
            ))
            .into());
        }
        Ok(data)
    };

    let stems: Vec<(String, usize, usize)> = params
        .named_layers()
        .iter()
        .map(|(stem, l)| (stem.clone(), l.weights.rows(), l.weights.cols()))
        .collect();
    for (stem, rows, cols) in &stems {
        let w = take(format!("{stem}.w"), vec![*rows, *cols])?;
        let b = take(format!("{stem}.b"), vec![*rows])?;
        let layer = match stem.split('.').next().unwrap() {
            "enc" => &mut params.encoder_layers[stem[4..].parse::<usize>().unwrap()],
            "mu" => &mut params.mu_head,
            "logvar" => &mut params.logvar_head,
            "dec" => &mut params.decoder_layers[stem[4..].parse::<usize>().unwrap()],
            "out" => &mut params.output_layer,
            other => {
                return Err(CheckpointError::TensorTable(format!(
                    "unrecognized layer stem {other:?}"
                ))
                .into())
            }
        };
        layer.weights = Matrix::from_vec(*rows, *cols, w)?;
        layer.bias = b;
    }
    let dim = meta.config.input_dim;
    let normalizer = Normalizer {
        mean: take("norm.mean".into(), vec![dim])?,
        std: take("norm.std".into(), vec![dim])?,
    };
    if let Some(name) = lookup.keys().next() {
        return Err(CheckpointError::TensorTable(format!("unexpected tensor {name:?}")).into());
    }

    Ok(Checkpoint {
        config: meta.config,
        taxonomy: meta.taxonomy,
        mode: meta.mode,
        params,
        normalizer,
        train_meta: meta.train_meta,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    fs::write(path, bytes).map_err(|e| CheckpointError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Checkpoint::from_bytes(&bytes)
}
