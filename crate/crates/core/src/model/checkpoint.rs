//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CAVP" | version: u32 | header_len: u32 | header: header_len bytes of `key=value\n` text
//! then per tensor, in declaration order:
//!     rank: u32 | dims: rank × u32 | values: numel × f64
//! ```

use std::io::{Read, Write};

use super::{CavtConfig, CavtParams, ModelError};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CAVP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &CavtParams) -> Result<(), ModelError> {
    let header = params.config.to_text();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    for t in &params.tensors {
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                ModelError::Checkpoint(format!(
                    "truncated {what} at byte {}: need {n} bytes, {} left",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Reads a checkpoint, validating every tensor against the layout implied by its header.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<CavtParams, ModelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic at byte 0".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {version} at byte 4"
        )));
    }
    let header_len = cur.u32("header length")? as usize;
    let header = std::str::from_utf8(cur.take(header_len, "header")?)
        .map_err(|_| ModelError::Checkpoint("header is not UTF-8 at byte 12".into()))?;
    let config = CavtConfig::from_text(header)?;

    let layout = super::ParamLayout::new(&config);
    let mut tensors = Vec::with_capacity(layout.specs.len());
    for spec in &layout.specs {
        let at = cur.pos;
        let rank = cur.u32("tensor rank")? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if dims != spec.shape {
            return Err(ModelError::Checkpoint(format!(
                "{} at byte {at} has shape {dims:?}, expected {:?}",
                spec.name, spec.shape
            )));
        }
        let raw = cur.take(spec.numel() * 8, &spec.name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(&dims, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} trailing bytes after byte {}",
            bytes.len() - cur.pos,
            cur.pos
        )));
    }
    CavtParams::from_tensors(&config, tensors)
}
