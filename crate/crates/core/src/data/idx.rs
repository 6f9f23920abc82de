//! IDX container (the MNIST distribution format).
//!
//! Big-endian header: `u32` magic `0x0000_08NN` (unsigned bytes, `NN`
//! dimensions), then one `u32` per dimension, then the `u8` payload.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{GpmError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw image tensor `count x rows x cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn parse_error(source: &str, offset: usize, reason: impl Into<String>) -> GpmError {
    GpmError::Parse {
        source_name: source.to_string(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str, source: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| parse_error(source, bytes.len(), format!("truncated header: missing {what}")))
}

fn check_magic(bytes: &[u8], expected: u32, source: &str) -> Result<()> {
    let magic = be_u32(bytes, 0, "magic number", source)?;
    if magic != expected {
        return Err(parse_error(source, 0, format!("magic 0x{magic:08x}, expected 0x{expected:08x}")));
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, source: &str) -> Result<&'a [u8]> {
    let available = bytes.len().saturating_sub(start);
    if available < len {
        return Err(parse_error(source, bytes.len(), format!("truncated payload: expected {len} bytes after offset {start}, found {available}")));
    }
    if available > len {
        return Err(parse_error(source, start + len, format!("{} trailing bytes", available - len)));
    }
    Ok(&bytes[start..])
}

pub fn parse_images(bytes: &[u8], source: &str) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, source)?;
    let count = be_u32(bytes, 4, "image count", source)? as usize;
    let rows = be_u32(bytes, 8, "row count", source)? as usize;
    let cols = be_u32(bytes, 12, "column count", source)? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| parse_error(source, 4, "image dimensions overflow"))?;
    let pixels = payload(bytes, 16, len, source)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8], source: &str) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, source)?;
    let count = be_u32(bytes, 4, "label count", source)? as usize;
    Ok(payload(bytes, 8, count, source)?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file, inflating it when it starts with the gzip signature.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| GpmError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| GpmError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_round_trip() {
        let img = IdxImages {
            count: 1,
            rows: 2,
            cols: 2,
            pixels: vec![0, 128, 255, 64],
        };
        let bytes = encode_images(&img);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_images(&bytes, "f").unwrap(), img);
        let labels = encode_labels(&[3, 1]);
        assert_eq!(parse_labels(&labels, "l").unwrap(), vec![3, 1]);
    }

    #[test]
    fn wrong_magic_is_reported_at_offset_zero() {
        let mut labels = encode_labels(&[1]);
        labels[3] = 3;
        match parse_labels(&labels, "l") {
            Err(GpmError::Parse { offset: 0, reason, .. }) => assert!(reason.contains("0x00000803")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let img = IdxImages {
            count: 2,
            rows: 1,
            cols: 3,
            pixels: vec![1; 6],
        };
        let bytes = encode_images(&img);
        assert!(matches!(parse_images(&bytes[..20], "f"), Err(GpmError::Parse { offset: 20, .. })));
        assert!(matches!(parse_images(&bytes[..10], "f"), Err(GpmError::Parse { offset: 10, .. })));
        let mut long = bytes.clone();
        long.push(9);
        assert!(matches!(parse_images(&long, "f"), Err(GpmError::Parse { offset: 22, .. })));
    }
}
