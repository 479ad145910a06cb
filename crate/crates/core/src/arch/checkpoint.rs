//! Binary checkpoint container.
//!
//! Layout (all integers little-endian `u32`, scalars little-endian `f64`):
//!
//! ```text
//! "VSDR1"
//! base_channels levels variant input_channels output_channels
//! rate_count rate_0 .. rate_{n-1}
//! entry_count
//! entry*: name_len name_bytes rank extent_0 .. extent_{rank-1} scalars..
//! ```

use std::path::Path;

use super::{Model, NamedTensor, NetworkConfig, Variant};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"VSDR1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub entries: Vec<NamedTensor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::InvalidValue(format!(
                "checkpoint truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }

    pub fn encode(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            c.base_channels,
            c.levels,
            c.variant.code() as usize,
            c.input_channels,
            c.output_channels,
            c.dilation_rates.len(),
        ] {
            put_u32(&mut out, v);
        }
        for &r in &c.dilation_rates {
            put_u32(&mut out, r);
        }
        put_u32(&mut out, self.entries.len());
        for e in &self.entries {
            put_u32(&mut out, e.name.len());
            out.extend_from_slice(e.name.as_bytes());
            put_u32(&mut out, e.value.rank());
            for &d in e.value.shape() {
                put_u32(&mut out, d);
            }
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::InvalidValue(
                "not a checkpoint (missing VSDR1 magic)".into(),
            ));
        }
        let mut r = Reader {
            bytes,
            pos: MAGIC.len(),
        };
        let base_channels = r.u32("base_channels")?;
        let levels = r.u32("levels")?;
        let variant_code = r.u32("variant")?;
        let variant = Variant::from_code(variant_code as u32).ok_or_else(|| {
            Error::InvalidValue(format!("checkpoint has unknown variant code {variant_code}"))
        })?;
        let input_channels = r.u32("input_channels")?;
        let output_channels = r.u32("output_channels")?;
        let n_rates = r.u32("rate count")?;
        let dilation_rates = (0..n_rates)
            .map(|_| r.u32("dilation rate"))
            .collect::<Result<Vec<_>>>()?;
        let config = NetworkConfig {
            base_channels,
            levels,
            dilation_rates,
            variant,
            input_channels,
            output_channels,
        };
        let count = r.u32("entry count")?;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u32("name length")?;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::InvalidValue("checkpoint entry name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("rank")?;
            if rank > crate::tensor::MAX_RANK {
                return Err(Error::InvalidValue(format!("{name}: rank {rank} too large")));
            }
            let shape = (0..rank)
                .map(|_| r.u32("extent"))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| {
                Error::InvalidValue(format!("{name}: extents overflow"))
            })?, &name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value = Tensor::new(shape, data)
                .map_err(|e| Error::InvalidValue(format!("{name}: {e}")))?;
            entries.push(NamedTensor { name, value });
        }
        if r.pos != bytes.len() {
            return Err(Error::InvalidValue(format!(
                "checkpoint has {} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { config, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

impl Model {
    /// Parameters followed by running statistics, in store order.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let store = self.store();
        Checkpoint {
            config: self.config().clone(),
            entries: store
                .params()
                .iter()
                .chain(store.buffers())
                .cloned()
                .collect(),
        }
    }

    /// Rebuilds a model from a checkpoint; every parameter and buffer must
    /// be present with its expected shape. Unrelated entries are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::new(ckpt.config.clone(), 0)?;
        let store = model.store_mut();
        for slot in store.params.iter_mut().chain(store.buffers.iter_mut()) {
            let value = ckpt.get(&slot.name).ok_or_else(|| {
                Error::InvalidValue(format!("checkpoint is missing '{}'", slot.name))
            })?;
            if value.shape() != slot.value.shape() {
                return Err(Error::ShapeMismatch {
                    lhs: value.shape().to_vec(),
                    rhs: slot.value.shape().to_vec(),
                    context: "checkpoint entry vs model parameter",
                });
            }
            slot.value = value.clone();
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_is_bit_exact() {
        let model = Model::new(NetworkConfig::new(Variant::UnetDr, 2), 5).unwrap();
        let ckpt = model.to_checkpoint();
        let bytes = ckpt.encode();
        assert_eq!(&bytes[..5], b"VSDR1");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn truncation_and_bad_magic_are_errors() {
        let model = Model::new(NetworkConfig::new(Variant::BaselineUnet, 1), 0).unwrap();
        let bytes = model.to_checkpoint().encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::decode(b"NOPE1").is_err());
    }
}
