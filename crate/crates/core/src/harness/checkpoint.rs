//! Binary container of named `f32` tensors plus a JSON configuration.
//!
//! Layout, all integers little-endian `u32`:
//! `"LGDF"`, version, entry count, then per entry the name length, UTF-8
//! name, rank, dims and `f32` payload, and finally the configuration length
//! followed by the configuration text.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LGDF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub config: String,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4, "magic")? != MAGIC {
            return Err(r.fail(0, "bad magic, not a checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(4, &format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = r.u32("entry count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for idx in 0..count {
            let what = format!("entry {idx}");
            let len = r.u32(&format!("{what} name length"))? as usize;
            let name = std::str::from_utf8(r.take(len, &format!("{what} name"))?)
                .map_err(|_| r.fail(r.pos - len, &format!("{what} name is not UTF-8")))?
                .to_string();
            let what = format!("entry {idx} `{name}`");
            let rank = r.u32(&format!("{what} rank"))? as usize;
            let dims = (0..rank)
                .map(|_| r.u32(&format!("{what} dims")).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let bytes_needed = dims
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .unwrap_or(usize::MAX);
            let payload = r.take(bytes_needed, &format!("{what} payload"))?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(dims, data)?));
        }
        let len = r.u32("config length")? as usize;
        let config = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| r.fail(r.pos - len, "config is not UTF-8"))?
            .to_string();
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, "trailing bytes after config"));
        }
        Ok(Self { tensors, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, reason: &str) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.fail(self.pos, &format!("truncated while reading {what}")));
        };
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor<f32>)], config: &str) -> Result<()> {
    Checkpoint {
        tensors: tensors.to_vec(),
        config: config.to_string(),
    }
    .save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor<f32>)>, String)> {
    let c = Checkpoint::load(path)?;
    Ok((c.tensors, c.config))
}
