//! IDX container (the MNIST distribution format): big-endian magic, big-endian
//! `u32` dimensions, then unsigned bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxKind {
    /// Rank-3 `u8` tensor `N × rows × cols`.
    Images,
    /// Rank-1 `u8` tensor of length `N`.
    Labels,
}

impl IdxKind {
    pub fn magic(self) -> u32 {
        match self {
            IdxKind::Images => IMAGES_MAGIC,
            IdxKind::Labels => LABELS_MAGIC,
        }
    }

    fn from_magic(magic: u32) -> Result<Self> {
        match magic {
            IMAGES_MAGIC => Ok(IdxKind::Images),
            LABELS_MAGIC => Ok(IdxKind::Labels),
            other => Err(Error::Format(format!("unknown magic number {other:#010x}"))),
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or(Error::Length {
        expected: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

/// Decode an in-memory IDX file. Images come back one example per column
/// (`rows·cols × N`), labels as `1 × N`; values are the raw bytes in `[0, 255]`.
pub fn parse_idx_bytes(bytes: &[u8]) -> Result<(IdxKind, Matrix)> {
    let kind = IdxKind::from_magic(read_u32(bytes, 0)?)?;
    let (header, n, dim) = match kind {
        IdxKind::Images => {
            let n = read_u32(bytes, 4)? as usize;
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            (16, n, rows * cols)
        }
        IdxKind::Labels => (8, read_u32(bytes, 4)? as usize, 1),
    };
    let expected = header + n * dim;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let body = &bytes[header..];
    let m = Matrix::from_fn(dim, n, |r, c| f64::from(body[c * dim + r]));
    Ok((kind, m))
}

pub fn parse_idx(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_bytes(&bytes).map(|(_, m)| m)
}

/// Like [`parse_idx`], but a file of the other kind is a format error.
pub fn parse_idx_as(path: impl AsRef<Path>, kind: IdxKind) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = read_u32(&bytes, 0)?;
    if magic != kind.magic() {
        return Err(Error::Format(format!(
            "{}: magic {magic:#010x}, expected {:#010x}",
            path.display(),
            kind.magic()
        )));
    }
    parse_idx_bytes(&bytes).map(|(_, m)| m)
}

/// Encode `n` images of `rows × cols` bytes, stored example-major.
pub fn encode_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != n * rows * cols {
        return Err(Error::Length {
            expected: n * rows * cols,
            found: pixels.len(),
        });
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
