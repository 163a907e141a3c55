//! Binary checkpoint format.
//!
//! ```text
//! "MKCN"  u32 version  u32 tensor_count
//! per tensor: u32 name_len, name (UTF-8), u32 ndim, u32 dims[ndim], f64 payload
//! u32 CRC-32 of every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CKPT_MAGIC: &[u8; 4] = b"MKCN";
pub const CKPT_VERSION: u32 = 1;

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let tensors = params.named_tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_checkpoint(&fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::MalformedRecord(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 16 {
        return Err(Error::MalformedRecord("checkpoint too short".into()));
    }
    if &bytes[..4] != CKPT_MAGIC {
        return Err(Error::MalformedRecord("bad checkpoint magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::MalformedRecord(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::MalformedRecord("tensor name is not UTF-8".into()))?
            .to_owned();
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::MalformedRecord(format!(
                    "tensor {name} has {ndim} dims"
                )))
            }
        };
        let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if r.pos != body.len() {
        return Err(Error::MalformedRecord("trailing bytes in checkpoint".into()));
    }
    ModelParams::from_named_tensors(tensors)
}
