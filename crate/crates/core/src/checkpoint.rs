//! `XCKP` checkpoint files.
//!
//! Layout (all integers `u32` little-endian, values `f64` little-endian):
//!
//! ```text
//! "XCKP" version count
//! repeated `count` times:
//!     name_len name_utf8
//!     rank dims.. values..            parameter value
//!     rank dims.. values..            ADAM first moment
//!     rank dims.. values..            ADAM second moment
//! ```
//!
//! Batch-norm running statistics are ordinary entries. Training metadata
//! (optimizer step, epoch, best validation score) travels as scalar entries
//! under the `meta.` prefix.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"XCKP";
pub const VERSION: u32 = 1;
pub const META_PREFIX: &str = "meta.";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub value: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    /// Snapshot of every parameter plus scalar metadata.
    pub fn capture(store: &ParamStore, meta: &[(&str, f64)]) -> Self {
        let mut entries: Vec<Entry> = store
            .iter()
            .map(|(_, p)| Entry {
                name: p.name.clone(),
                value: p.value.clone(),
                first_moment: p.first_moment.clone(),
                second_moment: p.second_moment.clone(),
            })
            .collect();
        let step = store
            .iter()
            .find(|(_, p)| p.kind == ParamKind::Trainable)
            .map_or(0, |(_, p)| p.step);
        let mut all_meta: Vec<(String, f64)> = vec![(format!("{META_PREFIX}adam_step"), step as f64)];
        all_meta.extend(meta.iter().map(|(k, v)| (format!("{META_PREFIX}{k}"), *v)));
        for (name, v) in all_meta {
            entries.push(Entry {
                name,
                value: Tensor::scalar(v),
                first_moment: Tensor::scalar(0.0),
                second_moment: Tensor::scalar(0.0),
            });
        }
        Checkpoint { entries }
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        let full = format!("{META_PREFIX}{key}");
        self.entries.iter().find(|e| e.name == full).map(|e| e.value.item())
    }

    /// Copies values and optimizer state into `store`.
    ///
    /// Every store parameter must be present with the same shape and the file
    /// may not carry extra non-meta entries; otherwise the error lists the
    /// differing names.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        let file: BTreeMap<&str, &Entry> = self
            .entries
            .iter()
            .filter(|e| !e.name.starts_with(META_PREFIX))
            .map(|e| (e.name.as_str(), e))
            .collect();
        let mut differing = Vec::new();
        for (_, p) in store.iter() {
            match file.get(p.name.as_str()) {
                Some(e) if e.value.shape() == p.value.shape() => {}
                _ => differing.push(p.name.clone()),
            }
        }
        for name in file.keys() {
            if store.id_of(name).is_none() {
                differing.push((*name).to_string());
            }
        }
        if !differing.is_empty() {
            differing.sort();
            return Err(Error::validation(format!(
                "checkpoint does not match model; differing parameters: {}",
                differing.join(", ")
            )));
        }
        let step = self.meta("adam_step").unwrap_or(0.0) as u64;
        for p in store.iter_mut() {
            let e = file[p.name.as_str()];
            p.value = e.value.clone();
            p.first_moment = e.first_moment.clone();
            p.second_moment = e.second_moment.clone();
            p.grad = None;
            if p.kind == ParamKind::Trainable {
                p.step = step;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.entries.len() as u32);
        for e in &self.entries {
            put_u32(&mut out, e.name.len() as u32);
            out.extend_from_slice(e.name.as_bytes());
            for t in [&e.value, &e.first_moment, &e.second_moment] {
                put_u32(&mut out, t.rank() as u32);
                for &d in t.shape() {
                    put_u32(&mut out, d as u32);
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected XCKP".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format {
                    offset: at,
                    message: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            let value = r.tensor()?;
            let first_moment = r.tensor()?;
            let second_moment = r.tensor()?;
            entries.push(Entry {
                name,
                value,
                first_moment,
                second_moment,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                message: "trailing bytes after last entry".into(),
            });
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated: wanted {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let at = self.pos;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format {
            offset: at,
            message: "tensor size overflow".into(),
        })?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(&shape, data)
    }
}
