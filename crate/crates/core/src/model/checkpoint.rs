//! Versioned binary checkpoint container.
//!
//! ```text
//! "AMBC"            magic
//! u32               format version
//! u32 n, n × u32    config block (model kind, then kind-specific integers)
//! u32 n, n × u8     config text echoed from the training run (UTF-8)
//! u32               tensor count
//! per tensor:
//!   u32 n, n × u8   name
//!   u8              dtype tag (0 = f64)
//!   u32             rank
//!   rank × u64      dims
//!   raw data        little-endian
//! ```
//!
//! All integers are little-endian. Tensors are written in name order so the
//! encoding of a given parameter set is unique.

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::generator::GeneratorConfig;
use crate::graph::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AMBC";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

pub const KIND_GENERATOR: u32 = 0;
pub const KIND_DISCRIMINATOR: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("unknown tensor dtype tag {0}")]
    UnknownDtype(u8),
    #[error("invalid tensor record `{0}`")]
    BadTensor(String),
    #[error("invalid config block: {0}")]
    BadConfig(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { expected: &'static str, found: &'static str },
}

pub(crate) fn kind_name(kind: u32) -> &'static str {
    match kind {
        KIND_GENERATOR => "generator",
        KIND_DISCRIMINATOR => "discriminator",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    /// Model kind followed by its configuration integers.
    pub config_words: Vec<u32>,
    pub config_text: String,
    pub tensors: ParamSet,
}

impl ModelCheckpoint {
    pub fn generator(config: &GeneratorConfig, tensors: ParamSet, config_text: impl Into<String>) -> Self {
        Self {
            config_words: generator_words(config),
            config_text: config_text.into(),
            tensors,
        }
    }

    pub fn kind(&self) -> u32 {
        self.config_words.first().copied().unwrap_or(u32::MAX)
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig, CheckpointError> {
        if self.kind() != KIND_GENERATOR {
            return Err(CheckpointError::WrongKind {
                expected: "generator",
                found: kind_name(self.kind()),
            });
        }
        generator_from_words(&self.config_words[1..])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.tensors.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_words.len() as u32).to_le_bytes());
        for w in &self.config_words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let n_words = r.u32()? as usize;
        let config_words = (0..n_words).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let text_len = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(text_len)?.to_vec())
            .map_err(|_| CheckpointError::BadConfig("config text is not UTF-8".into()))?;
        let n_tensors = r.u32()? as usize;
        let mut tensors = ParamSet::new();
        for _ in 0..n_tensors {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::BadTensor("<non-UTF-8 name>".into()))?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(CheckpointError::UnknownDtype(dtype));
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?).map_err(|_| CheckpointError::BadTensor(name.clone()))?;
                numel = numel.checked_mul(d).ok_or_else(|| CheckpointError::BadTensor(name.clone()))?;
                shape.push(d);
            }
            let n_bytes = numel.checked_mul(8).ok_or_else(|| CheckpointError::BadTensor(name.clone()))?;
            let raw = r.take(n_bytes)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|_| CheckpointError::BadTensor(name.clone()))?;
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self {
            config_words,
            config_text,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> crate::error::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
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

fn push_list(words: &mut Vec<u32>, items: &[usize]) {
    words.push(items.len() as u32);
    words.extend(items.iter().map(|&v| v as u32));
}

pub(crate) fn generator_words(c: &GeneratorConfig) -> Vec<u32> {
    let mut w = vec![KIND_GENERATOR, c.io_channels as u32, c.sample_rate];
    push_list(&mut w, &c.encoder_dims);
    push_list(&mut w, &c.strides);
    w.extend([c.latent_dim as u32, c.n_codebooks as u32, c.codebook_size as u32]);
    push_list(&mut w, &c.residual_dilations);
    w
}

/// Cursor over config words that reports malformed blocks.
pub(crate) struct Words<'a> {
    words: &'a [u32],
    pos: usize,
}

impl<'a> Words<'a> {
    pub(crate) fn new(words: &'a [u32]) -> Self {
        Self { words, pos: 0 }
    }

    pub(crate) fn next(&mut self) -> Result<usize, CheckpointError> {
        let v = *self
            .words
            .get(self.pos)
            .ok_or_else(|| CheckpointError::BadConfig("config block too short".into()))?;
        self.pos += 1;
        Ok(v as usize)
    }

    pub(crate) fn list(&mut self) -> Result<Vec<usize>, CheckpointError> {
        let n = self.next()?;
        if n > self.words.len() {
            return Err(CheckpointError::BadConfig("list length out of range".into()));
        }
        (0..n).map(|_| self.next()).collect()
    }

    pub(crate) fn finish(&self) -> Result<(), CheckpointError> {
        if self.pos == self.words.len() {
            Ok(())
        } else {
            Err(CheckpointError::BadConfig("unexpected trailing config words".into()))
        }
    }
}

fn generator_from_words(words: &[u32]) -> Result<GeneratorConfig, CheckpointError> {
    let mut w = Words::new(words);
    let cfg = GeneratorConfig {
        io_channels: w.next()?,
        sample_rate: w.next()? as u32,
        encoder_dims: w.list()?,
        strides: w.list()?,
        latent_dim: w.next()?,
        n_codebooks: w.next()?,
        codebook_size: w.next()?,
        residual_dilations: w.list()?,
    };
    w.finish()?;
    cfg.validate()
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    Ok(cfg)
}
