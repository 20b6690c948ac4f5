//! Feature binary files: magic, frame count, width, then f32 frames.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::linalg::Mat;
use crate::{Error, Result};

use super::FeatureSequence;

pub const FEATURE_MAGIC: &[u8; 8] = b"RGBFEAT1";

/// Write a feature sequence; values are stored as little-endian f32.
pub fn write_features(seq: &FeatureSequence, path: &Path) -> Result<()> {
    let frames = seq.frames();
    let mut buf: Vec<u8> =
        Vec::with_capacity(16 + frames.rows() * frames.cols() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
    for &v in frames.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a feature file, widening values to f64. The utterance id is not part
/// of the file; the caller supplies it.
pub fn read_features(path: &Path, utterance_id: impl Into<String>) -> Result<FeatureSequence> {
    let bytes = fs::read(path)?;
    let path_str = path.display().to_string();
    if bytes.len() < 16 {
        return Err(Error::format(&path_str, "truncated feature file"));
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::format(&path_str, "bad feature magic"));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + t * d * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            &path_str,
            format!("expected {expected} bytes for {t}x{d} frames, got {}", bytes.len()),
        ));
    }
    if t == 0 || d == 0 {
        return Err(Error::format(&path_str, "empty feature matrix"));
    }
    let mut data = Vec::with_capacity(t * d);
    for chunk in bytes[16..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    let frames = Mat::from_vec(t, d, data)?;
    FeatureSequence::new(utterance_id, frames)
}
