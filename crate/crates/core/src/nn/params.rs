//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout (little endian): magic `CUXW`, version byte, `u32`
//! tensor count, then per tensor `u32` name length, UTF-8 name, `u8`
//! trainable flag, `u32` rank, `u32` dims, `f32` data. A `u32`-prefixed
//! JSON metadata block closes the file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::nn::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"CUXW";
const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    /// Running statistics and other buffers are stored but not optimized.
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.data().iter().all(|v| v.is_finite()))
    }
}

impl ParamStore<f32> {
    pub fn to_bytes(&self, metadata: &serde_json::Value) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u8(VERSION);
        w.u32(self.params.len() as u32);
        for p in &self.params {
            w.str32(&p.name);
            w.u8(p.trainable as u8);
            w.u32(p.value.shape().len() as u32);
            for &d in p.value.shape() {
                w.u32(d as u32);
            }
            w.f32s(p.value.data());
        }
        w.str32(&serde_json::to_string(metadata)?);
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(r.corrupt("bad checkpoint magic"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(r.corrupt(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = r.str32()?;
            let trainable = match r.u8()? {
                0 => false,
                1 => true,
                f => return Err(r.corrupt(format!("bad trainable flag {f}"))),
            };
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(r.corrupt(format!("bad tensor rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = match n {
                Some(n) if n > 0 => n,
                _ => return Err(r.corrupt(format!("bad tensor shape {shape:?}"))),
            };
            let data = r.f32s(n)?;
            if store.find(&name).is_some() {
                return Err(r.corrupt(format!("duplicate tensor {name}")));
            }
            store.add(name, Tensor::from_vec(&shape, data)?, trainable);
        }
        let meta: serde_json::Value = serde_json::from_str(&r.str32()?)
            .map_err(|e| Error::Corrupt {
                offset: r.offset(),
                reason: format!("checkpoint metadata: {e}"),
            })?;
        r.expect_end()?;
        Ok((store, meta))
    }

    pub fn save(&self, path: &Path, metadata: &serde_json::Value) -> Result<()> {
        std::fs::write(path, self.to_bytes(metadata)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let bytes = crate::io::read_artifact(path)?;
        Self::from_bytes(&bytes)
    }
}
