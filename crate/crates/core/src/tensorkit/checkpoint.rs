//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     b"TAPIRCKPT"
//! version   u32
//! count     u32
//! manifest  count x { name_len u32, name utf8, dtype u8, rank u32, dims u64 x rank, offset u64 }
//! hparams   u32 length, then UTF-8 "key=value\n" lines
//! payload   raw little-endian elements; manifest offsets are relative to its start
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{DType, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 9] = b"TAPIRCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Ordered key=value hyperparameter block.
pub type Hyperparams = BTreeMap<String, String>;

/// A decoded checkpoint: named tensors in file order plus hyperparameters.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real = f32> {
    pub hparams: Hyperparams,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_store(store: &ParamStore<T>, hparams: Hyperparams) -> Self {
        Checkpoint {
            hparams,
            tensors: store
                .iter()
                .map(|(_, name, t)| (name.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter of `store` from this checkpoint; all names must match.
    pub fn load_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        let mut seen = 0;
        for (name, t) in &self.tensors {
            store.assign(&format!("{prefix}{name}"), t.clone())?;
            seen += 1;
        }
        let expected = store.iter().filter(|(_, n, _)| n.starts_with(prefix)).count();
        if prefix.is_empty() && seen != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {seen} tensors, model expects {expected}"
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += (t.numel() * T::DTYPE.size()) as u64;
        }
        let mut text = String::new();
        for (k, v) in &self.hparams {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("hyperparameter {k:?} is not representable")));
            }
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (_, t) in &self.tensors {
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = DType::from_tag(r.u8()?)
                .ok_or_else(|| Error::Checkpoint(format!("unknown dtype for {name}")))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let offset = r.u64()? as usize;
            manifest.push((name, dtype, shape, offset));
        }
        let hlen = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(hlen)?)
            .map_err(|_| Error::Checkpoint("hyperparameters are not UTF-8".into()))?;
        let mut hparams = Hyperparams::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed hyperparameter line {line:?}")))?;
            hparams.insert(k.to_string(), v.to_string());
        }
        let payload = &bytes[r.pos..];
        let mut tensors = Vec::with_capacity(count);
        for (name, dtype, shape, offset) in manifest {
            let numel: usize = shape.iter().product();
            let size = dtype.size();
            let end = offset + numel * size;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("payload for {name} is truncated")));
            }
            let raw = &payload[offset..end];
            let data: Vec<T> = match dtype {
                DType::F32 => raw.chunks(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks(8).map(|c| T::of(f64::read_le(c))).collect(),
            };
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { hparams, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
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
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::matrix(1, 2, vec![1.0, -2.0]));
        let mut hp = Hyperparams::new();
        hp.insert("kind".into(), "reviser".into());
        let bytes = Checkpoint::from_store(&store, hp).to_bytes().unwrap();
        assert_eq!(&bytes[..9], b"TAPIRCKPT");
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 1);
        // payload is the last 8 bytes
        assert_eq!(&bytes[bytes.len() - 8..bytes.len() - 4], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::<f32>::from_bytes(b"NOTACKPT").is_err());
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::matrix(2, 2, vec![1.0; 4]));
        let bytes = Checkpoint::from_store(&store, Hyperparams::new()).to_bytes().unwrap();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(rows in 1usize..5, cols in 1usize..5, seed in any::<u32>(), key in "[a-z_]{1,8}", val in "[ -~]{0,20}") {
            let mut store = ParamStore::<f64>::new();
            let data: Vec<f64> = (0..rows * cols).map(|i| (i as f64 + seed as f64).sin()).collect();
            store.add("a.w", Tensor::matrix(rows, cols, data));
            store.add("a.b", Tensor::new(vec![cols], vec![0.25; cols]).unwrap());
            let mut hp = Hyperparams::new();
            hp.insert(key, val);
            let ck = Checkpoint::from_store(&store, hp.clone());
            let back = Checkpoint::<f64>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.hparams, hp);
            prop_assert_eq!(back.tensors, ck.tensors);
        }
    }
}
