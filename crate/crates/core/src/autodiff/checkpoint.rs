//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "BLKRECKP"
//! version  u32
//! count    u32
//! count x record:
//!   name_len u32, name utf-8 bytes
//!   ndim     u32, ndim x u64 dims
//!   values   product(dims) x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BLKRECKP";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.tensor(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("bad name: {e}")))?;
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let values = (0..len).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        records.push(Record { name, shape, values });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(records)
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(store))?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Overwrites every entry of `store` from `records`. Unknown names,
/// shape mismatches, and entries absent from the checkpoint are errors.
pub fn restore(store: &mut ParamStore, records: &[Record]) -> Result<()> {
    let mut seen = vec![false; store.len()];
    for rec in records {
        let id = store
            .id(&rec.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", rec.name)))?;
        let expected = store.tensor(id).shape().to_vec();
        if expected != rec.shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: model {:?}, checkpoint {:?}",
                rec.name, expected, rec.shape
            )));
        }
        store.set_values(id, &rec.values)?;
        seen[id.0] = true;
    }
    if let Some(missing) = store.ids().find(|id| !seen[id.0]) {
        return Err(Error::Checkpoint(format!(
            "checkpoint lacks parameter {}",
            store.name(missing)
        )));
    }
    Ok(())
}

pub fn load_into(store: &mut ParamStore, path: impl AsRef<Path>) -> Result<()> {
    restore(store, &read_records(path)?)
}

/// Builds a fresh store holding exactly the checkpoint's entries.
pub fn to_store(records: &[Record]) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for rec in records {
        store.insert(rec.name.clone(), Tensor::new(rec.shape.clone(), rec.values.clone())?)?;
    }
    Ok(store)
}
