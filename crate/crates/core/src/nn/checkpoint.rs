//! `SPNN` parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SPNN" | u32 version
//! repeated until EOF:
//!   u16 name_len | name (UTF-8) | u8 rank | u32 dim × rank | f32 × prod(dims)
//! ```

use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPNN";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: Tensor<f32>,
}

impl Record {
    pub fn new<T: Scalar>(name: &str, tensor: &Tensor<T>) -> Self {
        Self {
            name: name.to_string(),
            tensor: tensor.cast(),
        }
    }
}

pub fn records_from_store<T: Scalar>(store: &ParamStore<T>) -> Vec<Record> {
    store.iter().map(|(_, name, t)| Record::new(name, t)).collect()
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidCheckpoint(format!("parameter name too long: {}", r.name)))?;
        let shape = r.tensor.shape();
        if shape.len() > MAX_RANK {
            return Err(Error::InvalidCheckpoint(format!("rank {} exceeds {MAX_RANK}", shape.len())));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(shape.len() as u8);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::InvalidCheckpoint(format!("dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for x in r.tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::InvalidCheckpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::InvalidCheckpoint("bad magic, not an SPNN file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::InvalidCheckpoint(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::InvalidCheckpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        if rank > MAX_RANK {
            return Err(Error::InvalidCheckpoint(format!("`{name}`: rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
        let Some((n, n_bytes)) = count else {
            return Err(Error::InvalidCheckpoint(format!("`{name}`: size overflow")));
        };
        let raw = r.take(n_bytes, "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        debug_assert_eq!(data.len(), n);
        if records.iter().any(|x: &Record| x.name == name) {
            return Err(Error::InvalidCheckpoint(format!("duplicate parameter `{name}`")));
        }
        records.push(Record {
            name,
            tensor: Tensor::from_vec(&shape, data)?,
        });
    }
    Ok(records)
}

pub fn save(path: &Path, records: &[Record]) -> Result<()> {
    std::fs::write(path, encode(records)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Overwrites `store` from records (extra records are ignored).
pub fn assign<T: Scalar>(store: &mut ParamStore<T>, records: &[Record]) -> Result<()> {
    let cast: Vec<(String, Tensor<T>)> = records.iter().map(|r| (r.name.clone(), r.tensor.cast())).collect();
    store.assign_from(cast.iter().map(|(n, t)| (n.as_str(), t)))
}
