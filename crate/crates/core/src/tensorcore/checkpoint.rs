//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "RVCKPT01"
//! version  u32      1
//! count    u32      number of named tensors
//! count x  tensor record
//! flag     u8       1 if optimizer state follows, else 0
//! [step    u64
//!  count x (m record, v record)]   same order as the named tensors
//!
//! tensor record: u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
//!                f64 payload in row-major order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{OptimizerState, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RVCKPT01";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            write_record(&mut out, name, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                for ((name, _), (m, v)) in self.tensors.iter().zip(state.m.iter().zip(&state.v)) {
                    write_record(&mut out, name, m);
                    write_record(&mut out, name, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            tensors.push(r.record()?);
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for _ in 0..count {
                    m.push(r.record()?.1);
                    v.push(r.record()?.1);
                }
                Some(OptimizerState { step, m, v })
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { tensors, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn write_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
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

    fn record(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::new(&shape, data)?))
    }
}
