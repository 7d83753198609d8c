//! FMAT: a tiny binary container for rank-2 matrices.
//!
//! Layout: magic bytes `FMAT`, u32 little-endian row count, u32 little-endian
//! column count, then rows·cols float32 little-endian values in row-major
//! order. Values are promoted to f64 on load and truncated to f32 on save.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FMAT";

pub fn write_fmat_bytes(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() != 2 {
        return Err(Error::Dimension(format!(
            "FMAT stores rank-2 tensors, got {:?}",
            t.shape()
        )));
    }
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    if rows > u32::MAX as usize || cols > u32::MAX as usize {
        return Err(Error::Data("FMAT: extent exceeds u32".into()));
    }
    let mut out = Vec::with_capacity(12 + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_fmat_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 12 {
        return Err(Error::Data("FMAT: truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Data(format!(
            "FMAT: bad magic {:?}, expected \"FMAT\"",
            &bytes[..4]
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Data("FMAT: element count overflow".into()))?;
    if rows == 0 || cols == 0 {
        return Err(Error::Data("FMAT: zero extent".into()));
    }
    if bytes.len() != 12 + 4 * n {
        return Err(Error::Data(format!(
            "FMAT: expected {} payload bytes, found {}",
            4 * n,
            bytes.len() - 12
        )));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = 12 + 4 * i;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::Data(format!("FMAT: non-finite value at index {i}")));
        }
        data.push(v);
    }
    Tensor::new(vec![rows, cols], data)
}

pub fn write_fmat(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let bytes = write_fmat_bytes(t)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_fmat(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    read_fmat_bytes(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
