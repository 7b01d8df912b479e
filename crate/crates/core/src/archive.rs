//! Named tensor archives.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "WARCHIV1"
//! count   u32
//! entry   repeated `count` times:
//!         name_len u32, name (UTF-8), rank u32, dims rank x u64,
//!         data prod(dims) x f32
//! ```
//!
//! Convolution weights are stored `[kh, kw, cin, cout]`, up-convolution
//! weights `[cin, 2, 2, cout]` and biases `[cout]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use autoseg_nn::ParamStore;
use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WARCHIV1";

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ArchiveEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Archive(format!(
                "{name}: shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn from_array(name: impl Into<String>, a: &ArrayD<f64>) -> Self {
        Self {
            name: name.into(),
            shape: a.shape().to_vec(),
            data: a.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_array(&self) -> Result<ArrayD<f64>> {
        ArrayD::from_shape_vec(
            IxDyn(&self.shape),
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .map_err(|e| Error::Archive(format!("{}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    entries: Vec<ArchiveEntry>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Archive("truncated archive".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: ArchiveEntry) {
        self.entries.retain(|e| e.name != entry.name);
        self.entries.push(entry);
    }

    pub fn remove(&mut self, name: &str) -> Option<ArchiveEntry> {
        let i = self.entries.iter().position(|e| e.name == name)?;
        Some(self.entries.remove(i))
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_store(store: &ParamStore) -> Self {
        Self {
            entries: store
                .iter()
                .map(|(_, p)| ArchiveEntry::from_array(&p.name, p.value()))
                .collect(),
        }
    }

    /// Overwrites every parameter of `store` with the entry of the same name.
    /// Fails without modifying `store` if any entry is missing or misshaped.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let mut staged = Vec::with_capacity(store.len());
        for (id, p) in store.iter() {
            let e = self
                .get(&p.name)
                .ok_or_else(|| Error::Archive(format!("missing entry {}", p.name)))?;
            if e.shape != p.value().shape() {
                return Err(Error::Archive(format!(
                    "{}: archive shape {:?}, parameter shape {:?}",
                    p.name,
                    e.shape,
                    p.value().shape()
                )));
            }
            staged.push((id, e.to_array()?));
        }
        for (id, v) in staged {
            *store.value_mut(id) = v;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Archive("bad magic".into()));
        }
        let count = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Archive("entry name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Archive(format!("{name}: shape overflow")))?;
            let blob = r.take(n.checked_mul(4).ok_or_else(|| Error::Archive("size overflow".into()))?)?;
            let data = blob
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            entries.push(ArchiveEntry { name, shape, data });
        }
        if r.pos != buf.len() {
            return Err(Error::Archive("trailing bytes after last entry".into()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| Error::Archive(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |f| f.write_all(&self.to_bytes()))
    }
}
