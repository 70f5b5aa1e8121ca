//! Named-tensor checkpoints: a little-endian binary blob plus a JSON manifest.
//!
//! Binary layout (`<base>.bin`), all integers little-endian:
//!
//! ```text
//! magic     4 bytes   b"MXSW"
//! version   u32       1
//! count     u32       number of tensors
//! count × {
//!   name_len  u32
//!   name      name_len bytes, UTF-8
//!   rank      u32
//!   dims      rank × u64
//!   data      product(dims) × f64 (IEEE-754 binary64)
//! }
//! ```
//!
//! The manifest (`<base>.json`) repeats each tensor's name, shape and byte
//! offset of its data, and carries a free-form `meta` object. Readers check
//! that the two agree.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MXSW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of the first data element in the binary file.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub type NamedTensor = (String, Tensor);

/// Encodes tensors, returning the bytes and the manifest entries.
pub fn encode(tensors: &[NamedTensor]) -> (Vec<u8>, Vec<ManifestEntry>) {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: buf.len() as u64,
        });
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    (buf, entries)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes the binary layout, returning tensors and their data offsets.
pub fn decode(bytes: &[u8]) -> Result<Vec<(NamedTensor, u64)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {name}: shape overflows")))?;
        let offset = r.pos as u64;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        out.push(((name, t), offset));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("json"))
}

/// Writes `<base>.bin` and `<base>.json`.
pub fn save(base: &Path, tensors: &[NamedTensor], meta: serde_json::Value) -> Result<()> {
    let (bin, json) = paths(base);
    if let Some(dir) = base.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let (bytes, entries) = encode(tensors);
    fs::write(&bin, bytes)?;
    let manifest = Manifest {
        format: "maxent-sac-tensors".into(),
        version: VERSION,
        tensors: entries,
        meta,
    };
    fs::write(&json, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a checkpoint written by [`save`], cross-checking the manifest.
pub fn load(base: &Path) -> Result<(Vec<NamedTensor>, serde_json::Value)> {
    let (bin, json) = paths(base);
    let manifest: Manifest = serde_json::from_slice(&fs::read(&json)?)?;
    if manifest.version != VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
    }
    let decoded = decode(&fs::read(&bin)?)?;
    if decoded.len() != manifest.tensors.len() {
        return Err(Error::Format("manifest and binary disagree on tensor count".into()));
    }
    for (((name, t), off), entry) in decoded.iter().zip(&manifest.tensors) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() || *off != entry.offset {
            return Err(Error::Format(format!("manifest entry {} does not match the binary", entry.name)));
        }
    }
    Ok((decoded.into_iter().map(|(nt, _)| nt).collect(), manifest.meta))
}

/// Looks up a tensor by name.
pub fn take(tensors: &mut Vec<NamedTensor>, name: &str) -> Result<Tensor> {
    let i = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Format(format!("checkpoint has no tensor named {name}")))?;
    Ok(tensors.swap_remove(i).1)
}
