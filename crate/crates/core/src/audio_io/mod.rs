//! Multichannel PCM files, fixed-length excerpts and dataset manifests.

pub mod manifest;
pub mod wav;

pub use manifest::{split_dataset, DatasetManifest, ManifestEntry, Split};
pub use wav::{encode_wav, parse_wav, read_wav, write_wav, WavError};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Audio as `[channels × frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWave {
    pub sample_rate: u32,
    pub samples: Tensor,
}

impl MultichannelWave {
    pub fn new(sample_rate: u32, samples: Tensor) -> Result<Self> {
        if samples.rank() != 2 || samples.dim(0) == 0 {
            return Err(Error::Shape(format!(
                "wave samples must be [channels ≥ 1 × frames], got {:?}",
                samples.shape()
            )));
        }
        if !samples.all_finite() {
            return Err(Error::NonFinite("wave samples".into()));
        }
        Ok(Self { sample_rate, samples })
    }

    pub fn n_channels(&self) -> usize {
        self.samples.dim(0)
    }

    pub fn n_frames(&self) -> usize {
        self.samples.dim(1)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_frames() as f64 / self.sample_rate as f64
    }

    /// Frames `start..start + len` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> MultichannelWave {
        let frames = self.n_frames();
        let mut data = Vec::with_capacity(self.n_channels() * len);
        for c in 0..self.n_channels() {
            data.extend_from_slice(&self.samples.data()[c * frames + start..c * frames + start + len]);
        }
        MultichannelWave {
            sample_rate: self.sample_rate,
            samples: Tensor::new(vec![self.n_channels(), len], data).unwrap(),
        }
    }
}

/// Cuts contiguous excerpts of `round(seconds · sr)` frames every
/// `round(hop_seconds · sr)` frames. A trailing partial excerpt is dropped.
pub fn frame_excerpts(wave: &MultichannelWave, seconds: f64, hop_seconds: f64) -> Result<Vec<MultichannelWave>> {
    if !(seconds > 0.0) || !(hop_seconds > 0.0) {
        return Err(Error::Config(format!(
            "excerpt length {seconds} s and hop {hop_seconds} s must be positive"
        )));
    }
    let sr = wave.sample_rate as f64;
    let len = (seconds * sr).round() as usize;
    let hop = ((hop_seconds * sr).round() as usize).max(1);
    if len == 0 {
        return Err(Error::Config(format!("{seconds} s is shorter than one frame")));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= wave.n_frames() {
        out.push(wave.slice(start, len));
        start += hop;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn silent(seconds: f64) -> MultichannelWave {
        let frames = (seconds * 44_100.0).round() as usize;
        MultichannelWave::new(44_100, Tensor::zeros(&[2, frames])).unwrap()
    }

    #[test]
    fn excerpt_counts() {
        assert_eq!(frame_excerpts(&silent(10.0), 5.0, 5.0).unwrap().len(), 2);
        assert_eq!(frame_excerpts(&silent(4.9), 5.0, 5.0).unwrap().len(), 0);
        let ex = frame_excerpts(&silent(10.0), 5.0, 2.5).unwrap();
        assert_eq!(ex.len(), 3);
        assert!(ex.iter().all(|e| e.n_frames() == 220_500));
    }

    #[test]
    fn excerpts_are_contiguous_slices() {
        let data: Vec<f64> = (0..20).map(|i| i as f64 / 100.0).collect();
        let w = MultichannelWave::new(10, Tensor::new(vec![1, 20], data).unwrap()).unwrap();
        let ex = frame_excerpts(&w, 0.6, 0.5).unwrap();
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[1].samples.data(), &[0.05, 0.06, 0.07, 0.08, 0.09, 0.10]);
    }

    #[test]
    fn invalid_lengths_are_rejected() {
        assert!(frame_excerpts(&silent(1.0), 0.0, 1.0).is_err());
        assert!(frame_excerpts(&silent(1.0), 1.0, -1.0).is_err());
        assert!(MultichannelWave::new(44_100, Tensor::zeros(&[0, 4])).is_err());
        assert!(MultichannelWave::new(44_100, Tensor::full(&[1, 4], f64::NAN)).is_err());
    }
}
