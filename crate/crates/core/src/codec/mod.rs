//! The `AMBS` encoded-stream container.
//!
//! ```text
//! "AMBS"   magic
//! u16      version
//! u32      sample rate
//! u16      channel count, (order + 1)²
//! u8       ambisonics order
//! u32      total encoder stride
//! u16      codebook count
//! u32      codebook size, a power of two
//! u64      latent frames
//! 32 bytes SHA-256 of the model checkpoint
//! u64      original length in samples
//! payload  codes, frame-major then codebook-major, log2(size) bits each,
//!          most significant bit first, zero-padded to a whole byte
//! ```
//!
//! Header integers are little-endian.

pub mod bitpack;

use std::path::Path;

use thiserror::Error;

use crate::ambisonics::AmbisonicsOrder;
use crate::audio_io::{read_wav, write_wav, MultichannelWave};
use crate::error::{Error, Result};
use crate::model::{Codes, GeneratorModel, ModelCheckpoint};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AMBS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 71;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("not an encoded stream (bad magic)")]
    BadMagic,
    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u16),
    #[error("stream truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("stream has {0} bytes after the payload")]
    TrailingBytes(usize),
    #[error("invalid stream header: {0}")]
    InvalidHeader(String),
    #[error("payload padding bits are not zero")]
    NonZeroPadding,
    #[error("stream was encoded with a different model checkpoint")]
    DigestMismatch,
    #[error("checkpoint does not match stream: {0}")]
    ModelMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub version: u16,
    pub sample_rate: u32,
    pub n_channels: u16,
    pub ambisonics_order: u8,
    pub total_stride: u32,
    pub n_codebooks: u16,
    pub codebook_size: u32,
    pub n_frames: u64,
    pub model_digest: [u8; 32],
    pub n_original_frames: u64,
}

impl BitstreamHeader {
    pub fn bits_per_code(&self) -> u32 {
        self.codebook_size.trailing_zeros()
    }

    /// Payload bits before padding.
    pub fn payload_bits(&self) -> Option<u64> {
        self.n_frames
            .checked_mul(self.n_codebooks as u64)?
            .checked_mul(self.bits_per_code() as u64)
    }

    pub fn payload_bytes(&self) -> Option<u64> {
        self.payload_bits().map(|b| b.div_ceil(8))
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::InvalidHeader(m));
        if self.version != VERSION {
            return Err(StreamError::UnsupportedVersion(self.version));
        }
        let order = AmbisonicsOrder::new(self.ambisonics_order as usize);
        if self.n_channels as usize != order.channels() {
            return bad(format!(
                "{} channels do not match order {}",
                self.n_channels, self.ambisonics_order
            ));
        }
        if self.codebook_size < 2 || !self.codebook_size.is_power_of_two() {
            return bad(format!("codebook size {} is not a power of two ≥ 2", self.codebook_size));
        }
        if self.sample_rate == 0 || self.total_stride == 0 || self.n_codebooks == 0 {
            return bad("sample rate, stride and codebook count must be positive".into());
        }
        let capacity = self.n_frames.checked_mul(self.total_stride as u64);
        if capacity.is_none_or(|c| self.n_original_frames > c) {
            return bad("original length exceeds the coded length".into());
        }
        if self.payload_bytes().is_none_or(|b| b > usize::MAX as u64 / 2) {
            return bad("payload size overflows".into());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&self.version.to_le_bytes());
        b.extend_from_slice(&self.sample_rate.to_le_bytes());
        b.extend_from_slice(&self.n_channels.to_le_bytes());
        b.push(self.ambisonics_order);
        b.extend_from_slice(&self.total_stride.to_le_bytes());
        b.extend_from_slice(&self.n_codebooks.to_le_bytes());
        b.extend_from_slice(&self.codebook_size.to_le_bytes());
        b.extend_from_slice(&self.n_frames.to_le_bytes());
        b.extend_from_slice(&self.model_digest);
        b.extend_from_slice(&self.n_original_frames.to_le_bytes());
        debug_assert_eq!(b.len(), HEADER_LEN);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StreamError> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(StreamError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(StreamError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let h = Self {
            version: u16_at(4),
            sample_rate: u32_at(6),
            n_channels: u16_at(10),
            ambisonics_order: bytes[12],
            total_stride: u32_at(13),
            n_codebooks: u16_at(17),
            codebook_size: u32_at(19),
            n_frames: u64_at(23),
            model_digest: bytes[31..63].try_into().unwrap(),
            n_original_frames: u64_at(63),
        };
        h.validate()?;
        Ok(h)
    }
}

/// `(sample_rate / total_stride) · n_codebooks · log2(codebook_size)`.
pub fn bitrate_of(header: &BitstreamHeader) -> f64 {
    header.sample_rate as f64 / header.total_stride as f64
        * header.n_codebooks as f64
        * (header.codebook_size as f64).log2()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedStream {
    pub header: BitstreamHeader,
    pub codes: Codes,
}

impl EncodedStream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let (n_cb, frames) = (self.codes.n_codebooks, self.codes.frames);
        let mut frame_major = Vec::with_capacity(n_cb * frames);
        for t in 0..frames {
            for q in 0..n_cb {
                frame_major.push(self.codes.get(q, t));
            }
        }
        let mut out = h.to_bytes();
        out.extend(bitpack::pack(&frame_major, h.bits_per_code()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StreamError> {
        let header = BitstreamHeader::from_bytes(bytes)?;
        let payload = &bytes[HEADER_LEN..];
        // validate() bounds the payload size, so this fits in usize.
        let needed = header.payload_bytes().unwrap() as usize;
        if payload.len() < needed {
            return Err(StreamError::Truncated {
                needed: HEADER_LEN + needed,
                available: bytes.len(),
            });
        }
        if payload.len() > needed {
            return Err(StreamError::TrailingBytes(payload.len() - needed));
        }
        let (n_cb, frames) = (header.n_codebooks as usize, header.n_frames as usize);
        let values = bitpack::unpack(payload, n_cb * frames, header.bits_per_code()).ok_or(StreamError::NonZeroPadding)?;
        let mut indices = vec![0u32; n_cb * frames];
        for t in 0..frames {
            for q in 0..n_cb {
                indices[q * frames + t] = values[t * n_cb + q];
            }
        }
        Ok(Self {
            header,
            codes: Codes {
                n_codebooks: n_cb,
                frames,
                indices,
            },
        })
    }

    pub fn bitrate(&self) -> f64 {
        bitrate_of(&self.header)
    }
}

fn model_of(checkpoint: &ModelCheckpoint) -> Result<(GeneratorModel, AmbisonicsOrder)> {
    let cfg = checkpoint.generator_config()?;
    let order = AmbisonicsOrder::from_channels(cfg.io_channels).ok_or_else(|| {
        Error::Config(format!("model has {} channels, not a B-format count", cfg.io_channels))
    })?;
    if !cfg.codebook_size.is_power_of_two() || cfg.codebook_size < 2 {
        return Err(Error::Config(format!(
            "codebook size {} cannot be bit-packed (needs a power of two)",
            cfg.codebook_size
        )));
    }
    Ok((GeneratorModel::new(cfg)?, order))
}

/// Codes `wave` with the generator stored in `checkpoint`.
pub fn encode(wave: &MultichannelWave, checkpoint: &ModelCheckpoint) -> Result<EncodedStream> {
    let (model, order) = model_of(checkpoint)?;
    let cfg = model.config();
    if wave.n_channels() != cfg.io_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, model expects {}",
            wave.n_channels(),
            cfg.io_channels
        )));
    }
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "input sample rate {} differs from model rate {}",
            wave.sample_rate, cfg.sample_rate
        )));
    }
    let codes = model.encode_codes(&checkpoint.tensors, &wave.samples)?;
    let header = BitstreamHeader {
        version: VERSION,
        sample_rate: cfg.sample_rate,
        n_channels: cfg.io_channels as u16,
        ambisonics_order: order.value() as u8,
        total_stride: cfg.total_stride() as u32,
        n_codebooks: cfg.n_codebooks as u16,
        codebook_size: cfg.codebook_size as u32,
        n_frames: codes.frames as u64,
        model_digest: checkpoint.digest(),
        n_original_frames: wave.n_frames() as u64,
    };
    Ok(EncodedStream { header, codes })
}

/// Synthesizes audio from a stream, trimmed to the original length.
pub fn decode(stream: &EncodedStream, checkpoint: &ModelCheckpoint) -> Result<MultichannelWave> {
    let h = &stream.header;
    if h.model_digest != checkpoint.digest() {
        return Err(StreamError::DigestMismatch.into());
    }
    let (model, _) = model_of(checkpoint)?;
    let cfg = model.config();
    let mismatch = |what: &str| Err(StreamError::ModelMismatch(what.to_string()).into());
    if h.n_channels as usize != cfg.io_channels {
        return mismatch("channel count");
    }
    if h.total_stride as usize != cfg.total_stride() || h.sample_rate != cfg.sample_rate {
        return mismatch("stride or sample rate");
    }
    if h.n_codebooks as usize != cfg.n_codebooks || h.codebook_size as usize != cfg.codebook_size {
        return mismatch("quantizer shape");
    }
    let audio = model.decode_codes(&checkpoint.tensors, &stream.codes)?;
    let keep = h.n_original_frames as usize;
    let full = audio.dim(1);
    let mut data = Vec::with_capacity(audio.dim(0) * keep);
    for row in audio.data().chunks(full) {
        data.extend_from_slice(&row[..keep]);
    }
    MultichannelWave::new(h.sample_rate, Tensor::new(vec![audio.dim(0), keep], data)?)
}

pub fn encode_file(input: impl AsRef<Path>, checkpoint: &ModelCheckpoint, output: impl AsRef<Path>) -> Result<EncodedStream> {
    let wave = read_wav(input)?;
    let stream = encode(&wave, checkpoint)?;
    std::fs::write(output, stream.to_bytes())?;
    Ok(stream)
}

pub fn decode_file(input: impl AsRef<Path>, checkpoint: &ModelCheckpoint, output: impl AsRef<Path>) -> Result<MultichannelWave> {
    let stream = EncodedStream::from_bytes(&std::fs::read(input)?)?;
    let wave = decode(&stream, checkpoint)?;
    write_wav(&wave, 16, output)?;
    Ok(wave)
}
