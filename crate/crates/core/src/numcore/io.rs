//! Named-array binary encoding shared by parameter checkpoints (`ENGW`) and
//! feature bundles (`ENGF`).
//!
//! Array block layout, all integers little-endian `u32`:
//!
//! ```text
//! count
//! repeated count times:
//!   name_len, name (UTF-8), rank, dims[rank], values (f64 LE, row-major)
//! ```
//!
//! A checkpoint file is `"ENGW"`, `version`, then one array block.

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ENGW";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?;
    write_u32(w, len)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)?;
    if len > MAX_NAME_LEN {
        return Err(Error::Format(format!("string length {len} exceeds {MAX_NAME_LEN}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Format("name is not valid UTF-8".into()))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of data".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 4], version: u32) -> Result<()> {
    w.write_all(magic)?;
    write_u32(w, version)
}

pub fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4], version: u32) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    let found = read_u32(r)?;
    if found != version {
        return Err(Error::Format(format!("unsupported version {found}, expected {version}")));
    }
    Ok(())
}

pub fn write_arrays<W: Write>(w: &mut W, arrays: &[(&str, &Tensor)]) -> Result<()> {
    let count = u32::try_from(arrays.len()).map_err(|_| Error::Format("too many arrays".into()))?;
    write_u32(w, count)?;
    for (name, t) in arrays {
        write_str(w, name)?;
        write_u32(w, t.rank() as u32)?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format("dimension too large".into()))?;
            write_u32(w, d)?;
        }
        let mut bytes = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_arrays<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let count = read_u32(r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name = read_str(r)?;
        let rank = read_u32(r)?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("array {name}: unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= 1 << 31)
            .ok_or_else(|| Error::Format(format!("array {name}: shape {shape:?} too large")))?;
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Format(format!("array {name}: {e}")))?;
        out.push((name, tensor));
    }
    Ok(out)
}

/// Writes a complete `ENGW` checkpoint.
pub fn save_checkpoint<W: Write>(w: &mut W, arrays: &[(&str, &Tensor)]) -> Result<()> {
    write_magic(w, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    write_arrays(w, arrays)
}

pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    read_magic(r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    read_arrays(r)
}
