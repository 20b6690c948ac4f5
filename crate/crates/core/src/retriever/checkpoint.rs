//! Checkpoint persistence: named little-endian f64 arrays with shape headers.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

use super::{RetrieverDims, TowerParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RGBCKPT1";

/// Write all parameters as named arrays in layout order.
pub fn save_checkpoint(params: &TowerParams, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let entries = params.entries();
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &params.data()[e.offset..e.offset + e.len] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
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
            return Err(Error::format(&self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Load a checkpoint saved by [`save_checkpoint`]. The architecture is not
/// stored in the file; shapes are validated against `dims`.
pub fn load_checkpoint(path: &Path, dims: &RetrieverDims) -> Result<TowerParams> {
    let bytes = fs::read(path)?;
    let path_str = path.display().to_string();
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path_str.clone(),
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(&path_str, "bad checkpoint magic"));
    }
    let count = r.u32()? as usize;
    let template = TowerParams::zeros(dims)?;
    if count != template.entries().len() {
        return Err(Error::format(
            &path_str,
            format!(
                "checkpoint has {count} arrays, architecture expects {}",
                template.entries().len()
            ),
        ));
    }
    let mut data = vec![0.0; template.len()];
    for e in template.entries() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(&path_str, "array name is not UTF-8"))?;
        if name != e.name {
            return Err(Error::format(
                &path_str,
                format!("expected array {:?}, found {:?}", e.name, name),
            ));
        }
        let ndim = r.u32()? as usize;
        if ndim != e.shape.len() {
            return Err(Error::format(
                &path_str,
                format!("array {name}: expected rank {}, got {ndim}", e.shape.len()),
            ));
        }
        for (axis, &expect) in e.shape.iter().enumerate() {
            let got = r.u32()? as usize;
            if got != expect {
                return Err(Error::format(
                    &path_str,
                    format!("array {name}: axis {axis} expected {expect}, got {got}"),
                ));
            }
        }
        for slot in data[e.offset..e.offset + e.len].iter_mut() {
            *slot = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(&path_str, "trailing bytes after last array"));
    }
    TowerParams::from_data(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retriever::RetrieverDims;

    #[test]
    fn save_load_save_is_byte_identical() {
        let dims = RetrieverDims {
            feat_dim: 5,
            conv: vec![],
            mlp: vec![6],
            embed_dim: 4,
            text_dim: 16,
        };
        let params = TowerParams::init(&dims, 31).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&params, &p1).unwrap();
        let loaded = load_checkpoint(&p1, &dims).unwrap();
        assert_eq!(loaded.data(), params.data());
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        fs::write(&p, b"NOTCKPT0rest").unwrap();
        let dims = RetrieverDims::default();
        assert!(matches!(
            load_checkpoint(&p, &dims),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dims = RetrieverDims {
            feat_dim: 5,
            conv: vec![],
            mlp: vec![6],
            embed_dim: 4,
            text_dim: 16,
        };
        let params = TowerParams::init(&dims, 31).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save_checkpoint(&params, &p).unwrap();
        let other = RetrieverDims {
            text_dim: 32,
            ..dims
        };
        assert!(load_checkpoint(&p, &other).is_err());
    }
}
