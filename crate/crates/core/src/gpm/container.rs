//! `GPM1` matrix container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"GPM1"  u32 count  { u32 rows  u32 cols  rows*cols f64 (row-major) } * count
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GpmError, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"GPM1";

/// Serializes `matrices` in order.
pub fn encode(matrices: &[Matrix]) -> Vec<u8> {
    let payload: usize = matrices.iter().map(|m| 8 + 8 * m.as_slice().len()).sum();
    let mut out = Vec::with_capacity(8 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(matrices.len() as u32).to_le_bytes());
    for m in matrices {
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    source: &'a str,
}

impl Cursor<'_> {
    fn fail(&self, reason: impl Into<String>) -> GpmError {
        GpmError::Parse {
            source_name: self.source.to_string(),
            offset: self.offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(self.fail(format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.offset)));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a container; `source_name` labels errors.
pub fn decode(bytes: &[u8], source_name: &str) -> Result<Vec<Matrix>> {
    let mut c = Cursor {
        bytes,
        offset: 0,
        source: source_name,
    };
    if c.take(4, "magic")? != MAGIC {
        c.offset = 0;
        return Err(c.fail("bad magic, expected GPM1"));
    }
    let count = c.u32("layer count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rows = c.u32("row count")? as usize;
        let cols = c.u32("column count")? as usize;
        let start = c.offset;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| c.fail(format!("matrix {rows}x{cols} too large")))?;
        let raw = c.take(len, "matrix payload")?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let m = Matrix::from_vec(rows, cols, data).map_err(|e| GpmError::Parse {
            source_name: source_name.to_string(),
            offset: start as u64,
            reason: e.to_string(),
        })?;
        out.push(m);
    }
    if c.offset != bytes.len() {
        return Err(c.fail(format!("{} trailing bytes", bytes.len() - c.offset)));
    }
    Ok(out)
}

pub fn write_to<W: Write>(mut w: W, matrices: &[Matrix]) -> std::io::Result<()> {
    w.write_all(&encode(matrices))
}

pub fn read_from<R: Read>(mut r: R, source_name: &str) -> Result<Vec<Matrix>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| GpmError::io(source_name, e))?;
    decode(&bytes, source_name)
}

pub fn save(path: &Path, matrices: &[Matrix]) -> Result<()> {
    fs::write(path, encode(matrices)).map_err(|e| GpmError::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Matrix>> {
    let bytes = fs::read(path).map_err(|e| GpmError::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}
