//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "SQDTCKPT"
//! version     u32      1
//! width       u8       4 (f32 payload) or 8 (f64 payload)
//! header_len  u32      length of the JSON config header
//! header      header_len bytes of UTF-8 JSON
//! count       u32      number of tensors
//! per tensor:
//!   name_len  u16
//!   name      name_len bytes of UTF-8
//!   rows      u32
//!   cols      u32
//!   data      rows * cols values, row-major, `width` bytes each
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::params::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SQDTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `params` with a JSON header. Values are stored at the precision of `S`.
pub fn write_checkpoint<S: Scalar, W: Write>(
    mut w: W,
    header: &serde_json::Value,
    params: &ParamSet<S>,
) -> Result<()> {
    let width = std::mem::size_of::<S>() as u8;
    let header = serde_json::to_vec(header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u8(width)?;
    w.write_u32::<LittleEndian>(header.len() as u32)?;
    w.write_all(&header)?;
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for t in params.tensors() {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("tensor name too long: {}", t.name)));
        }
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name)?;
        w.write_u32::<LittleEndian>(t.rows as u32)?;
        w.write_u32::<LittleEndian>(t.cols as u32)?;
        for &x in &t.data {
            match width {
                4 => w.write_f32::<LittleEndian>(x.to_f32().unwrap_or(f32::NAN))?,
                _ => w.write_f64::<LittleEndian>(x.as_f64())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint, converting values to `S`.
pub fn read_checkpoint<S: Scalar, R: Read>(mut r: R) -> Result<(serde_json::Value, ParamSet<S>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = r.read_u8()?;
    if width != 4 && width != 8 {
        return Err(Error::Checkpoint(format!("unsupported scalar width {width}")));
    }
    let header_len = r.read_u32::<LittleEndian>()? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header: serde_json::Value = serde_json::from_slice(&header)?;
    let count = r.read_u32::<LittleEndian>()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let v = match width {
                4 => r.read_f32::<LittleEndian>()? as f64,
                _ => r.read_f64::<LittleEndian>()?,
            };
            data.push(S::lit(v));
        }
        params.push(Tensor { name, rows, cols, data });
    }
    Ok((header, params))
}
