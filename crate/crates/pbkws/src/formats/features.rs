//! Feature file: `"PKWS"`, version `u32 = 1`, frames `u32`, dim `u32`, then
//! `frames * dim` row-major `f32` values. No padding, no trailer.

use std::fs;
use std::path::Path;

use pbkws_core::features::{FeatureError, FeatureSequence};

use super::{FormatError, Reader, VERSION};
use crate::error::Error;

pub const MAGIC: &[u8; 4] = b"PKWS";
pub const HEADER_LEN: usize = 16;

pub fn encode_features(matrix: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * matrix.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.dim() as u32).to_le_bytes());
    for v in matrix.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads only the header; returns `(frames, dim)`.
pub fn decode_header(bytes: &[u8]) -> Result<(usize, usize), FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch(version));
    }
    let frames = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if frames == 0 {
        return Err(FormatError::ZeroFrames);
    }
    if dim == 0 {
        return Err(FormatError::ZeroDim);
    }
    Ok((frames, dim))
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSequence, FormatError> {
    let (frames, dim) = decode_header(bytes)?;
    let mut r = Reader::new(bytes);
    r.take(HEADER_LEN)?;
    let data = r.f32s(frames * dim)?;
    r.finish()?;
    FeatureSequence::new(frames, dim, data).map_err(|e| match e {
        FeatureError::ZeroFrames => FormatError::ZeroFrames,
        FeatureError::ZeroDim => FormatError::ZeroDim,
        _ => FormatError::NonFiniteValue,
    })
}

pub fn read_features(path: &Path) -> Result<FeatureSequence, Error> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|e| Error::format(path, e))
}

/// Feature dimension from a file header, without reading the payload.
pub fn probe_dim(path: &Path) -> Result<usize, Error> {
    use std::io::Read;
    let mut header = [0u8; HEADER_LEN];
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut header).map_err(|e| Error::io(path, e))?;
    decode_header(&header[..n]).map(|(_, d)| d).map_err(|e| Error::format(path, e))
}

/// Writes a feature file. The `FeatureSequence` type already guarantees
/// finite values.
pub fn write_features(matrix: &FeatureSequence, path: &Path) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_features(matrix)).map_err(|e| Error::io(path, e))
}
