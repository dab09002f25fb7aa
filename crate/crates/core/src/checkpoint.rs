//! Versioned binary tensor dump with a JSON metadata block.
//!
//! Layout (little endian): magic `FLSCKPT\0`, u32 version, u64 metadata length,
//! metadata bytes, u32 tensor count, then per tensor: u32 name length, name,
//! u8 trainable flag, u32 rank, u64 dims, f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FlsError, Result};
use crate::nn::Param;

pub const MAGIC: &[u8; 8] = b"FLSCKPT\0";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, meta: &serde_json::Value, tensors: &[&Param]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta = serde_json::to_vec(meta).map_err(|e| FlsError::Parse(e.to_string()))?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(&meta)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for p in tensors {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&[p.trainable as u8])?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for d in &p.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in &p.value {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

const MAX_ELEMENTS: u64 = 1 << 32;

pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<Param>)> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |what: &str| FlsError::Parse(format!("{}: {what}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let meta_len = read_u64(&mut r)?;
    if meta_len > MAX_ELEMENTS {
        return Err(bad("metadata too large"));
    }
    let mut meta = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta)?;
    let meta: serde_json::Value = serde_json::from_slice(&meta).map_err(|e| bad(&e.to_string()))?;
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n = read_u32(&mut r)? as usize;
        if n > 4096 {
            return Err(bad("tensor name too long"));
        }
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name not utf-8"))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(bad("tensor rank too large"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut total: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(&mut r)?;
            total = total.saturating_mul(d);
            shape.push(d as usize);
        }
        if total > MAX_ELEMENTS {
            return Err(bad("tensor too large"));
        }
        let mut value = Vec::with_capacity(total as usize);
        let mut b = [0u8; 8];
        for _ in 0..total {
            r.read_exact(&mut b)?;
            value.push(f64::from_le_bytes(b));
        }
        let mut p = Param::new(name, &shape, value);
        p.trainable = flag[0] != 0;
        out.push(p);
    }
    Ok((meta, out))
}

/// Copies stored values into `params` by name, checking shapes.
pub fn load_into(params: Vec<&mut Param>, stored: &[Param]) -> Result<()> {
    for p in params {
        let s = stored
            .iter()
            .find(|s| s.name == p.name)
            .ok_or_else(|| FlsError::Parse(format!("checkpoint lacks tensor {}", p.name)))?;
        if s.shape != p.shape {
            return Err(FlsError::Parse(format!(
                "tensor {} has shape {:?}, expected {:?}",
                p.name, s.shape, p.shape
            )));
        }
        p.value.clone_from(&s.value);
    }
    Ok(())
}
