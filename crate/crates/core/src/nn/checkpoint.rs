//! Binary checkpoints.
//!
//! Layout: 8 magic bytes, `u32` format version, `u32` header length, a JSON
//! header holding the model config and label scaler, `u64` value count, then
//! every parameter value as a little-endian `f32` in layout order. All
//! integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{LabelScaler, TrainedModel};
use super::{build_model, ModelConfig, NnError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VLNKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    scaler: LabelScaler,
}

pub fn save_checkpoint(model: &TrainedModel) -> Vec<u8> {
    let header =
        serde_json::to_vec(&Header { model: model.config.clone(), scaler: model.scaler }).expect("header serializes");
    let mut out = Vec::with_capacity(32 + header.len() + 4 * model.params.total_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params.total_count() as u64).to_le_bytes());
    out.extend_from_slice(&model.params.to_f32_bytes());
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], NnError> {
    if bytes.len() < n {
        return Err(NnError::Checkpoint("truncated file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn load_checkpoint(mut bytes: &[u8]) -> Result<TrainedModel, NnError> {
    let b = &mut bytes;
    if take(b, 8)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(take(b, header_len)?).map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
    let count = u64::from_le_bytes(take(b, 8)?.try_into().expect("8 bytes")) as usize;
    let mut params = build_model::<f32>(&header.model)?;
    if count != params.total_count() {
        return Err(NnError::Checkpoint(format!("{count} values stored, model needs {}", params.total_count())));
    }
    let raw = take(b, 4 * count)?;
    if !b.is_empty() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    params.load_flat(&values)?;
    Ok(TrainedModel { config: header.model, params, scaler: header.scaler })
}

pub fn write_checkpoint(path: &Path, model: &TrainedModel) -> Result<(), NnError> {
    std::fs::write(path, save_checkpoint(model))
        .map_err(|source| NnError::Io { path: path.display().to_string(), source })
}

pub fn read_checkpoint(path: &Path) -> Result<TrainedModel, NnError> {
    let bytes = std::fs::read(path).map_err(|source| NnError::Io { path: path.display().to_string(), source })?;
    load_checkpoint(&bytes)
}
