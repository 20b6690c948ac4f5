//! Index persistence.
//!
//! Layout: magic `RGBIDX1`, u8 kind (0 exact, 1 ivf), u32 dim, u64 count,
//! the id table (u64 each), the vector block (f32 each), for IVF a u32
//! cluster count followed by the centroid block (f32) and one length-prefixed
//! assignment list per cluster (u32 entries), and a trailing CRC32 of all
//! preceding bytes. Everything is little-endian. Vectors are quantized from
//! f64 to f32 at save; searches after load use the stored precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

use super::{IndexKind, IvfData, VectorIndex};

pub const INDEX_MAGIC: &[u8; 7] = b"RGBIDX1";

fn push_f32_block(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serialize the index to bytes (stable: same index, same bytes).
pub fn index_to_bytes(index: &VectorIndex) -> Vec<u8> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(INDEX_MAGIC);
    buf.push(match index.kind() {
        IndexKind::Exact => 0u8,
        IndexKind::Ivf => 1u8,
    });
    buf.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for &id in index.ids() {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    push_f32_block(&mut buf, index.vectors());
    if let Some(ivf) = index.ivf() {
        buf.extend_from_slice(&(ivf.n_clusters as u32).to_le_bytes());
        push_f32_block(&mut buf, &ivf.centroids);
        for list in &ivf.assignments {
            buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for &p in list {
                buf.extend_from_slice(&p.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save_index(index: &VectorIndex, path: &Path) -> Result<()> {
    let bytes = index_to_bytes(index);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(&self.path, "truncated index file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_block(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

/// Load an index saved by [`save_index`], verifying the checksum before any
/// structure is built. IVF indices come back probing all clusters; callers
/// narrow that with [`VectorIndex::set_n_probe`].
pub fn load_index(path: &Path) -> Result<VectorIndex> {
    let bytes = fs::read(path)?;
    let path_str = path.display().to_string();
    if bytes.len() < INDEX_MAGIC.len() + 4 {
        return Err(Error::format(&path_str, "file too short"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::format(&path_str, "checksum mismatch"));
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
        path: path_str.clone(),
    };
    if r.take(INDEX_MAGIC.len())? != INDEX_MAGIC {
        return Err(Error::format(&path_str, "bad index magic"));
    }
    let kind = match r.u8()? {
        0 => IndexKind::Exact,
        1 => IndexKind::Ivf,
        other => {
            return Err(Error::format(
                &path_str,
                format!("unknown index kind {other}"),
            ))
        }
    };
    let dim = r.u32()? as usize;
    let count = r.u64()? as usize;
    if dim == 0 || count == 0 {
        return Err(Error::format(&path_str, "empty index"));
    }
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(r.u64()?);
    }
    let vectors = r.f32_block(count * dim)?;
    let ivf = match kind {
        IndexKind::Exact => None,
        IndexKind::Ivf => {
            let n_clusters = r.u32()? as usize;
            if n_clusters == 0 || n_clusters > count {
                return Err(Error::format(&path_str, "invalid cluster count"));
            }
            let centroids = r.f32_block(n_clusters * dim)?;
            let mut assignments = Vec::with_capacity(n_clusters);
            let mut assigned_total = 0usize;
            for _ in 0..n_clusters {
                let len = r.u32()? as usize;
                assigned_total += len;
                let mut list = Vec::with_capacity(len);
                for _ in 0..len {
                    let p = r.u32()?;
                    if p as usize >= count {
                        return Err(Error::format(&path_str, "assignment out of range"));
                    }
                    list.push(p);
                }
                assignments.push(list);
            }
            if assigned_total != count {
                return Err(Error::format(
                    &path_str,
                    format!("assignments cover {assigned_total} of {count} entries"),
                ));
            }
            Some(IvfData {
                centroids,
                n_clusters,
                assignments,
                n_probe: n_clusters,
            })
        }
    };
    if r.pos != body.len() {
        return Err(Error::format(&path_str, "trailing bytes"));
    }
    Ok(VectorIndex::from_parts(dim, ids, vectors, ivf))
}
