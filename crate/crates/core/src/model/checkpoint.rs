//! Binary checkpoint: little-endian, versioned, with a JSON header.
//!
//! Layout: magic `GLABCKPT`, `u32` version, `u32` header length, header JSON
//! (`model`, `shape`, `echo`), `u64` training step, `u32` tensor count, then
//! per tensor a `u32`-prefixed name, `u32` rank, `u32` dims and `f32` data,
//! then the observation statistics as `u32` dim, `f64` count, means and M2.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelShape, RunningNorm};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GLABCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub step: u64,
    /// Free-form configuration echo.
    pub echo: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    shape: ModelShape,
    echo: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            model: self.model.config.clone(),
            shape: self.model.shape,
            echo: self.echo.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(64 + 4 * self.model.params.n_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.step.to_le_bytes());
        let ps = &self.model.params;
        out.extend_from_slice(&(ps.len() as u32).to_le_bytes());
        for t in &ps.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let n = &self.model.norm;
        out.extend_from_slice(&(n.dim() as u32).to_le_bytes());
        out.extend_from_slice(&n.count.to_le_bytes());
        for v in n.mean.iter().chain(&n.m2) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        header.model.validate()?;
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let mut model = Model::<f32>::new(&header.model, header.shape, 0);
        let count = r.u32()? as usize;
        if count != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {count}",
                model.params.len()
            )));
        }
        for t in &mut model.params.tensors {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if name != t.name || shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {shape:?} does not match {} {:?}",
                    t.name, t.shape
                )));
            }
            for v in &mut t.data {
                *v = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
            }
        }
        let dim = r.u32()? as usize;
        if dim != header.shape.obs_dim {
            return Err(Error::Checkpoint("normalizer width mismatch".into()));
        }
        let mut norm = RunningNorm::new(dim);
        norm.count = r.f64()?;
        for v in &mut norm.mean {
            *v = r.f64()?;
        }
        for v in &mut norm.m2 {
            *v = r.f64()?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        model.norm = norm;
        if !model.params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Checkpoint {
            model,
            step,
            echo: header.echo,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
