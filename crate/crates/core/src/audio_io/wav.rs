//! RIFF/WAVE PCM reading and writing.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::MultichannelWave;
use crate::tensor::Tensor;

const TAG_PCM: u16 = 1;
const TAG_FLOAT: u16 = 3;
const TAG_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed RIFF/WAVE header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding: format tag {tag}, {bits} bits")]
    UnsupportedCodec { tag: u16, bits: u16 },
    #[error("truncated data chunk: header declares {declared} bytes, {available} present")]
    TruncatedData { declared: usize, available: usize },
    #[error("unsupported bit depth {0} for writing (16 or 24)")]
    UnsupportedBitDepth(u16),
    #[error("non-finite sample value")]
    NonFinite,
    #[error("wav i/o: {0}")]
    Io(#[from] std::io::Error),
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Format, WavError> {
    if body.len() < 16 {
        return Err(WavError::MalformedHeader(format!("fmt chunk of {} bytes", body.len())));
    }
    let mut tag = u16_at(body, 0);
    let bits = u16_at(body, 14);
    if tag == TAG_EXTENSIBLE {
        if body.len() < 40 {
            return Err(WavError::MalformedHeader("short WAVE_FORMAT_EXTENSIBLE chunk".into()));
        }
        // The sub-format GUID starts with the actual format tag.
        tag = u16_at(body, 24);
    }
    let fmt = Format {
        tag,
        channels: u16_at(body, 2),
        sample_rate: u32_at(body, 4),
        bits,
    };
    if fmt.channels == 0 || fmt.sample_rate == 0 {
        return Err(WavError::MalformedHeader("zero channels or sample rate".into()));
    }
    match (fmt.tag, fmt.bits) {
        (TAG_PCM, 16 | 24) | (TAG_FLOAT, 32) => Ok(fmt),
        (tag, bits) => Err(WavError::UnsupportedCodec { tag, bits }),
    }
}

/// Decodes a WAV image held in memory.
pub fn parse_wav(bytes: &[u8]) -> Result<MultichannelWave, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedHeader("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut fmt = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if id == b"data" {
            let fmt: Format = fmt.ok_or_else(|| WavError::MalformedHeader("data chunk before fmt chunk".into()))?;
            let available = bytes.len() - body_start;
            let block = fmt.channels as usize * (fmt.bits as usize / 8);
            if size > available || !size.is_multiple_of(block) {
                return Err(WavError::TruncatedData { declared: size, available });
            }
            return Ok(decode_samples(&bytes[body_start..body_start + size], &fmt));
        }
        let body = bytes
            .get(body_start..body_start + size)
            .ok_or_else(|| WavError::MalformedHeader(format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        if id == b"fmt " {
            fmt = Some(parse_fmt(body)?);
        }
        pos = body_start + size + (size & 1);
    }
    Err(WavError::MalformedHeader("no data chunk".into()))
}

fn decode_samples(data: &[u8], fmt: &Format) -> MultichannelWave {
    let channels = fmt.channels as usize;
    let width = fmt.bits as usize / 8;
    let frames = data.len() / (channels * width);
    let mut out = vec![0.0; channels * frames];
    for (i, s) in data.chunks_exact(width).enumerate() {
        let v = match (fmt.tag, fmt.bits) {
            (TAG_PCM, 16) => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
            (TAG_PCM, 24) => {
                let raw = i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8;
                raw as f64 / 8_388_608.0
            }
            _ => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
        };
        let (frame, ch) = (i / channels, i % channels);
        out[ch * frames + frame] = v;
    }
    MultichannelWave {
        sample_rate: fmt.sample_rate,
        samples: Tensor::new(vec![channels, frames], out).unwrap(),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWave, WavError> {
    parse_wav(&fs::read(path)?)
}

/// Clamps to [−1, 1] and rounds half away from zero.
pub fn quantize(v: f64, bit_depth: u16) -> i32 {
    let full = (1i64 << (bit_depth - 1)) as f64;
    (v.clamp(-1.0, 1.0) * full).round().clamp(-full, full - 1.0) as i32
}

/// Encodes integer PCM at 16 or 24 bits.
pub fn encode_wav(wave: &MultichannelWave, bit_depth: u16) -> Result<Vec<u8>, WavError> {
    if bit_depth != 16 && bit_depth != 24 {
        return Err(WavError::UnsupportedBitDepth(bit_depth));
    }
    if !wave.samples.all_finite() {
        return Err(WavError::NonFinite);
    }
    let channels = wave.n_channels();
    let frames = wave.n_frames();
    let width = bit_depth as usize / 8;
    let data_len = channels * frames * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&TAG_PCM.to_le_bytes());
    out.extend_from_slice(&(channels as u16).to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * (channels * width) as u32).to_le_bytes());
    out.extend_from_slice(&((channels * width) as u16).to_le_bytes());
    out.extend_from_slice(&bit_depth.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    let s = wave.samples.data();
    for t in 0..frames {
        for c in 0..channels {
            let q = quantize(s[c * frames + t], bit_depth).to_le_bytes();
            out.extend_from_slice(&q[..width]);
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }
    Ok(out)
}

pub fn write_wav(wave: &MultichannelWave, bit_depth: u16, path: impl AsRef<Path>) -> Result<(), WavError> {
    fs::write(path, encode_wav(wave, bit_depth)?)?;
    Ok(())
}
