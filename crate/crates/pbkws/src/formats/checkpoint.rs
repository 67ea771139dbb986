//! Checkpoint file: `"PKWC"`, version `u32 = 1`, stage tag `u8`,
//! `d_in`/`hidden`/`d_emb` as `u32`, the parameter blocks `W1, b1, W2, b2,
//! Wce, bce, Wctc, bctc` as `f32`, then provenance: seed `u64`, training
//! config digest `u64`, generation `u32`.

use std::fs;
use std::path::Path;

use pbkws_core::encoder::{Dims, EncoderCheckpoint, EncoderParams, Stage};
use sha2::{Digest, Sha256};

use super::{FormatError, Reader, VERSION};
use crate::error::Error;

pub const MAGIC: &[u8; 4] = b"PKWC";

pub fn encode_checkpoint(ckpt: &EncoderCheckpoint) -> Vec<u8> {
    let dims = ckpt.dims();
    let values = ckpt.params.values();
    let mut out = Vec::with_capacity(21 + 4 * values.len() + 20);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(ckpt.stage.tag());
    for d in [dims.d_in, dims.hidden, dims.d_emb] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    out.extend_from_slice(&ckpt.config_digest.to_le_bytes());
    out.extend_from_slice(&ckpt.generation.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderCheckpoint, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch(version));
    }
    let tag = r.u8()?;
    let stage = Stage::from_tag(tag).ok_or(FormatError::BadStage(tag))?;
    let (d_in, hidden, d_emb) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let dims = Dims::new(d_in, hidden, d_emb).map_err(|e| FormatError::ShapeMismatch(e.to_string()))?;
    let raw = r.f32s(dims.param_count())?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::NonFiniteValue);
    }
    let params = EncoderParams::from_values(dims, raw.into_iter().map(f64::from).collect())
        .map_err(|e| FormatError::ShapeMismatch(e.to_string()))?;
    let seed = r.u64()?;
    let config_digest = r.u64()?;
    let generation = r.u32()?;
    r.finish()?;
    Ok(EncoderCheckpoint {
        params,
        stage,
        seed,
        config_digest,
        generation,
    })
}

/// Hex SHA-256 of the encoded checkpoint.
pub fn checkpoint_digest(ckpt: &EncoderCheckpoint) -> String {
    hex::encode(Sha256::digest(encode_checkpoint(ckpt)))
}

pub fn save_checkpoint(ckpt: &EncoderCheckpoint, path: &Path) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderCheckpoint, Error> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::format(path, e))
}
