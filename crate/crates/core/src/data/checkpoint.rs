//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SRTG"                      4-byte magic
//! version                     u32
//! meta_len                    u64
//! meta                        meta_len bytes of UTF-8 JSON
//! count                       u64
//! count x {
//!     name_len                u32
//!     name                    UTF-8
//!     rank                    u32
//!     extents                 rank x u64
//!     dtype                   u8 (1 = f32, 2 = f64)
//!     data                    raw little-endian elements
//! }
//! crc                         u64, CRC-64/XZ of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::nn::Module;
use crate::tensor::{DType, Element, RngState, Tensor};
use crate::training::TrainConfig;

pub const MAGIC: [u8; 4] = *b"SRTG";
pub const VERSION: u32 = 1;
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn crc64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Completed training steps.
    pub step: u64,
    pub rng: RngState,
    pub gen_opt_steps: u64,
    pub disc_opt_steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn from_tensor<T: Element>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => TensorData::F64(t.to_f64_vec()),
        };
        NamedTensor {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    /// Converts to `T`. Same-type conversion is exact.
    pub fn to_tensor<T: Element>(&self) -> Result<Tensor<T>> {
        let data = match (&self.data, T::DTYPE) {
            (TensorData::F32(v), DType::F32) => v.iter().map(|&x| T::of(x as f64)).collect(),
            (d, _) => d.to_f64().into_iter().map(T::of).collect(),
        };
        Tensor::new(data, &self.shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Checkpoint {
            meta,
            tensors: Vec::new(),
        }
    }

    /// Appends every parameter of `m` as `<prefix>.<name>`.
    pub fn push_module<T: Element>(&mut self, prefix: &str, m: &dyn Module<T>) {
        for (name, t) in m.named_params() {
            self.tensors
                .push(NamedTensor::from_tensor(format!("{prefix}.{name}"), &t));
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor<impl Element>) {
        self.tensors.push(NamedTensor::from_tensor(name, t));
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensors under `<prefix>.`, keyed by the remainder of the name.
    pub fn tensors_under<T: Element>(&self, prefix: &str) -> Result<BTreeMap<String, Tensor<T>>> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|t| t.name.strip_prefix(&p).map(|rest| (rest.to_string(), t)))
            .map(|(k, t)| Ok((k, t.to_tensor()?)))
            .collect()
    }

    /// Rebuilds the generator stored under `gen.`.
    pub fn generator(&self) -> Result<Generator> {
        let g = Generator::new(&self.meta.generator, &mut crate::tensor::Rng::new(0))?;
        self.load_module("gen", &g)?;
        Ok(g)
    }

    /// Loads parameters under `prefix` into `m`, all or nothing.
    pub fn load_module<T: Element>(&self, prefix: &str, m: &dyn Module<T>) -> Result<()> {
        m.load_named(&self.tensors_under(prefix)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("checkpoint meta serializes");
        out.extend((meta.len() as u64).to_le_bytes());
        out.extend(meta);
        out.extend((self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend((t.name.len() as u32).to_le_bytes());
            out.extend(t.name.as_bytes());
            out.extend((t.shape.len() as u32).to_le_bytes());
            for &e in &t.shape {
                out.extend((e as u64).to_le_bytes());
            }
            out.push(t.data.dtype().tag());
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            }
        }
        let crc = crc64(&out);
        out.extend(crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 {
            return Err(CheckpointError::Truncated);
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        if bytes.len() < 8 {
            return Err(CheckpointError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                supported: VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let computed = crc64(body);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }

        let mut r = Reader { buf: body, pos: 8 };
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| CheckpointError::Malformed(format!("meta: {e}")))?;
        let count = r.u64()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|e| e as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &b| a.checked_mul(b))
                .ok_or_else(|| CheckpointError::Malformed(format!("{name}: extent overflow")))?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag)
                .ok_or_else(|| CheckpointError::Malformed(format!("{name}: unknown dtype tag {tag}")))?;
            let raw = r.take(n.checked_mul(dtype.size()).ok_or(CheckpointError::Truncated)?)?;
            let data = match dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes after tensor table",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint { meta, tensors })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        if end > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes via a temporary sibling file and a rename, so readers never see a
/// partial checkpoint.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}
