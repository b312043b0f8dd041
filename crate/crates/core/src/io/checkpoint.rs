//! Binary checkpoint layout (little endian):
//!
//! ```text
//! magic "RSEGCKPT" | u32 version | u64 meta_len | meta JSON
//! u32 n_blocks | { u32 name_len | name | u32 rank | u64 dims… | f64 data… }
//! sha256 of every preceding byte
//! ```
//!
//! The input scaler is stored as the blocks `input.mean` and `input.std`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_version, IoError, FORMAT_VERSION};
use crate::model::{InputScaler, Model, ModelConfig, ParamStore};
use crate::tensor::Tensor;
use crate::train::{EpochRecord, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RSEGCKPT";
const SCALER_MEAN: &str = "input.mean";
const SCALER_STD: &str = "input.std";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Subject excluded from training, if this is a LOSOCV fold.
    pub held_out: Option<String>,
    pub train_subjects: Vec<String>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_block(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(meta: &CheckpointMeta, model: &Model) -> Vec<u8> {
    let meta_json = serde_json::to_vec(meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u64(&mut out, meta_json.len() as u64);
    out.extend_from_slice(&meta_json);
    put_u32(&mut out, model.params().len() as u32 + 2);
    for (_, name, t) in model.params().iter() {
        put_block(&mut out, name, t);
    }
    let scaler = model.scaler();
    put_block(
        &mut out,
        SCALER_MEAN,
        &Tensor::vector(scaler.mean().to_vec()),
    );
    put_block(&mut out, SCALER_STD, &Tensor::vector(scaler.std().to_vec()));
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IoError::format(self.path, "truncated checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize, IoError> {
        usize::try_from(self.u64()?).map_err(|_| IoError::format(self.path, "length overflow"))
    }

    fn block(&mut self) -> Result<(String, Tensor), IoError> {
        let name_len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| IoError::format(self.path, "block name is not UTF-8"))?
            .to_owned();
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.len())
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| IoError::format(self.path, "block size overflow"))?;
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| IoError::format(self.path, "block size overflow"))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| IoError::format(self.path, e.to_string()))?;
        Ok((name, t))
    }
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint, IoError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(IoError::format(path, "not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(IoError::Checksum {
            path: path.to_owned(),
        });
    }
    let mut r = Reader {
        buf: body,
        pos: 8,
        path,
    };
    check_version(path, r.u32()?)?;
    let meta_len = r.len()?;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|source| IoError::Json {
            path: path.to_owned(),
            source,
        })?;
    let n_blocks = r.u32()?;
    let mut params = ParamStore::new();
    let (mut mean, mut std) = (None, None);
    for _ in 0..n_blocks {
        let (name, t) = r.block()?;
        match name.as_str() {
            SCALER_MEAN => mean = Some(t.into_data()),
            SCALER_STD => std = Some(t.into_data()),
            _ => {
                params.push(name, t);
            }
        }
    }
    if r.pos != body.len() {
        return Err(IoError::format(path, "trailing bytes after the last block"));
    }
    let scaler = mean
        .zip(std)
        .and_then(|(m, s)| InputScaler::new(m, s))
        .ok_or_else(|| IoError::format(path, "missing or invalid input scaler"))?;
    let model =
        Model::from_parts(meta.model.clone(), params, scaler).map_err(|source| IoError::Model {
            path: path.to_owned(),
            source,
        })?;
    Ok(Checkpoint { meta, model })
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, model: &Model) -> Result<(), IoError> {
    std::fs::write(path, encode_checkpoint(meta, model)).map_err(|e| IoError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
