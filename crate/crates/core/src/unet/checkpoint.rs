//! Single-file checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "MEWUNET\0"
//! version      u32       1
//! config       u32 len + UTF-8 key=value text (NetworkConfig)
//! meta         u32 len + UTF-8 key=value text (epoch, seed, ...)
//! count        u32
//! count × record:
//!   name       u32 len + UTF-8
//!   rank       u8
//!   dims       rank × u64
//!   data       product(dims) × f64
//! ```
//!
//! Records appear in parameter registration order followed by any extra
//! state (optimizer moments), so serialization is canonical.

use std::path::Path;

use super::{MewUnet, NetworkConfig};
use crate::error::{MewError, Result};
use crate::kv::KeyValues;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MEWUNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub meta: KeyValues,
    pub tensors: Vec<(String, Tensor)>,
}

fn ckpt_err(msg: impl Into<String>) -> MewError {
    MewError::Checkpoint(msg.into())
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
            .ok_or_else(|| ckpt_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        let at = self.pos;
        std::str::from_utf8(self.take(n)?).map_err(|_| ckpt_err(format!("invalid UTF-8 at byte {at}")))
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    /// Captures every parameter and buffer of `net`.
    pub fn from_network(net: &MewUnet, meta: KeyValues) -> Self {
        Self {
            config: net.cfg.clone(),
            meta,
            tensors: net
                .params
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_text(&mut out, &self.config.to_kv().to_text());
        put_text(&mut out, &self.meta.to_text());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_text(&mut out, name);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(ckpt_err("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ckpt_err(format!("unsupported version {version}")));
        }
        let config = NetworkConfig::from_kv(&KeyValues::parse(r.text()?)?)?;
        let meta = KeyValues::parse(r.text()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.text()?.to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| ckpt_err("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| ckpt_err(format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != buf.len() {
            return Err(ckpt_err(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            config,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the network and loads every parameter by name.
    pub fn restore(&self) -> Result<MewUnet> {
        let mut net = MewUnet::build(&self.config, 0)?;
        let ids: Vec<_> = net.params.ids().collect();
        for id in ids {
            let name = net.params.get(id).name.clone();
            let t = self
                .tensor(&name)
                .ok_or_else(|| ckpt_err(format!("missing parameter {name}")))?;
            net.params.set_value(id, t.clone())?;
        }
        Ok(net)
    }
}
