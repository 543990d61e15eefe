//! `VOXW1` weight files: architecture descriptor followed by named tensors.

use std::path::Path;

use super::layers::Param;
use super::nets::Network;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"VOXW1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture<'a>(
        descriptor: impl Into<String>,
        params: impl IntoIterator<Item = &'a Param>,
    ) -> Self {
        let tensors = params
            .into_iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.value.clone(),
            })
            .collect();
        Self {
            descriptor: descriptor.into(),
            tensors,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut buf, self.descriptor.len());
        buf.extend_from_slice(self.descriptor.as_bytes());
        put_u32(&mut buf, self.tensors.len());
        for t in &self.tensors {
            put_u32(&mut buf, t.name.len());
            buf.extend_from_slice(t.name.as_bytes());
            put_u32(&mut buf, t.shape.len());
            for &d in &t.shape {
                put_u32(&mut buf, d);
            }
            for v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len()
            || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC
        {
            return Err(Error::BadMagic { expected: "VOXW1" });
        }
        let mut r = Reader {
            bytes,
            pos: CHECKPOINT_MAGIC.len(),
        };
        let dlen = r.u32()?;
        let descriptor = r.string(dlen)?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let nlen = r.u32()?;
            let name = r.string(nlen)?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?,
            )?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor {
                name,
                shape,
                values,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::PayloadMismatch {
                expected: r.pos,
                found: bytes.len(),
            });
        }
        Ok(Self {
            descriptor,
            tensors,
        })
    }

    /// Snapshot of the parameters followed by the buffers of each network, in order.
    pub fn capture_nets(descriptor: impl Into<String>, nets: &[&dyn Network]) -> Self {
        let all = nets
            .iter()
            .flat_map(|n| n.params().into_iter().chain(n.buffers()));
        Self::capture(descriptor, all)
    }

    /// Inverse of [`capture_nets`](Self::capture_nets). Names, order and shapes must match.
    pub fn restore_nets(&self, descriptor: &str, nets: &mut [&mut dyn Network]) -> Result<()> {
        if self.descriptor != descriptor {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: file has '{}', model is '{descriptor}'",
                self.descriptor
            )));
        }
        let expected: usize = nets
            .iter()
            .map(|n| n.params().len() + n.buffers().len())
            .sum();
        if expected != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "file has {} tensors, model has {expected}",
                self.tensors.len()
            )));
        }
        let mut stored = self.tensors.iter();
        for net in nets.iter() {
            for p in net.params().into_iter().chain(net.buffers()) {
                let t = stored.next().expect("count checked");
                if t.name != p.name || t.shape != p.shape {
                    return Err(Error::Checkpoint(format!(
                        "tensor '{}' {:?} does not match model tensor '{}' {:?}",
                        t.name, t.shape, p.name, p.shape
                    )));
                }
            }
        }
        let mut stored = self.tensors.iter();
        for net in nets.iter_mut() {
            for p in net.params_mut() {
                p.value
                    .copy_from_slice(&stored.next().expect("count checked").values);
            }
            for p in net.buffers_mut() {
                p.value
                    .copy_from_slice(&stored.next().expect("count checked").values);
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Truncated {
                needed: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint("non-utf8 name".into()))
    }
}
