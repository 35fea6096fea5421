//! Binary weight archives.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    8 bytes  "SALUTWT\0"
//! version  u32      1
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   rank     u32, dims u32 × rank
//!   data     f32 × Π dims
//! ```
//!
//! Declared sizes are validated against the remaining payload before any
//! allocation, so hostile headers cannot balloon memory.

use std::path::Path;

use super::ByteReader;
use crate::error::{Error, Result};
use crate::nn::{Tensor, WeightArchive};

pub const MAGIC: &[u8; 8] = b"SALUTWT\0";
pub const VERSION: u32 = 1;

const MAX_TENSORS: u32 = 65_536;
const MAX_NAME: u32 = 4_096;
const MAX_RANK: u32 = 8;

pub fn read_weights_bytes(data: &[u8]) -> Result<WeightArchive> {
    let mut r = ByteReader::new(data);
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32_le()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported weight archive version {version}"
        )));
    }
    let count = r.u32_le()?;
    if count > MAX_TENSORS {
        return Err(Error::Format(format!("tensor count {count} too large")));
    }
    let mut archive = WeightArchive::new();
    for _ in 0..count {
        let name_len = r.u32_le()?;
        if name_len > MAX_NAME {
            return Err(Error::Format(format!("tensor name length {name_len}")));
        }
        let name_bytes = r.take(name_len as usize)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| r.parse_err("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32_le()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("tensor rank {rank} outside 1..=8")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut count_vals: usize = 1;
        for _ in 0..rank {
            let d = r.u32_le()? as usize;
            if d == 0 {
                return Err(Error::Format("zero tensor dimension".into()));
            }
            count_vals = count_vals
                .checked_mul(d)
                .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
            dims.push(d);
        }
        let need = count_vals
            .checked_mul(4)
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        if r.remaining() < need {
            return Err(Error::Truncated {
                needed: need,
                available: r.remaining(),
            });
        }
        let payload = r.take(need)?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::new(dims, values)
            .map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        archive.insert(name, tensor)?;
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after last tensor",
            r.remaining()
        )));
    }
    Ok(archive)
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<WeightArchive> {
    read_weights_bytes(&std::fs::read(path)?)
}

pub fn weights_to_bytes(archive: &WeightArchive) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(archive.len() as u32).to_le_bytes());
    for (name, tensor) in archive.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_weights(path: impl AsRef<Path>, archive: &WeightArchive) -> Result<()> {
    std::fs::write(path, weights_to_bytes(archive))?;
    Ok(())
}
