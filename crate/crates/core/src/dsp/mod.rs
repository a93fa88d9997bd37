//! Spectral analysis for the losses and discriminators, plus the low-pass
//! anchor used in listening-test style comparisons.

pub mod fir;
pub mod mel;
pub mod stft;

pub use fir::{kaiser_lowpass, lowpass_anchor, ANCHOR_CUTOFF_HZ};
pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank};
pub use stft::{hann_window, stft_magnitude};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramConfig {
    pub window_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub sample_rate: f64,
}

impl SpectrogramConfig {
    /// Hop of a quarter window, full band.
    pub fn new(window_length: usize, n_mels: usize, sample_rate: f64) -> Self {
        Self {
            window_length,
            hop_length: (window_length / 4).max(1),
            n_mels,
            f_min: 0.0,
            f_max: sample_rate / 2.0,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("spectrogram: {m}")));
        if !self.window_length.is_power_of_two() {
            return bad(format!("window length {} is not a power of two", self.window_length));
        }
        if self.hop_length == 0 || self.hop_length > self.window_length {
            return bad(format!("hop {} outside 1..={}", self.hop_length, self.window_length));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be ≥ 1".into());
        }
        if !(self.sample_rate > 0.0) || !(self.f_min >= 0.0) || !(self.f_min < self.f_max) {
            return bad("need 0 ≤ f_min < f_max and a positive sample rate".into());
        }
        if self.f_max > self.sample_rate / 2.0 {
            return bad(format!("f_max {} above Nyquist", self.f_max));
        }
        Ok(())
    }
}

/// The reference seven-scale mel set: windows 32..2048, 5..320 bands.
pub fn default_mel_scales(sample_rate: f64) -> Vec<SpectrogramConfig> {
    [(32, 5), (64, 10), (128, 20), (256, 40), (512, 80), (1024, 160), (2048, 320)]
        .into_iter()
        .map(|(w, m)| SpectrogramConfig::new(w, m, sample_rate))
        .collect()
}

/// Scales usable on excerpts of `len` samples: the default set minus any
/// window the reflection padding cannot serve.
pub fn mel_scales_for_length(sample_rate: f64, len: usize) -> Vec<SpectrogramConfig> {
    default_mel_scales(sample_rate)
        .into_iter()
        .filter(|c| c.window_length / 2 < len)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scales_are_valid() {
        let s = default_mel_scales(44_100.0);
        assert_eq!(s.len(), 7);
        for c in &s {
            c.validate().unwrap();
            assert_eq!(c.hop_length * 4, c.window_length);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = SpectrogramConfig::new(512, 20, 44_100.0);
        c.hop_length = 1024;
        assert!(c.validate().is_err());
        let mut c = SpectrogramConfig::new(500, 20, 44_100.0);
        assert!(c.validate().is_err());
        c.window_length = 512;
        c.f_max = 30_000.0;
        assert!(c.validate().is_err());
        c.f_max = 20_000.0;
        c.n_mels = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn short_excerpts_drop_long_windows() {
        let s = mel_scales_for_length(44_100.0, 512);
        assert_eq!(s.last().unwrap().window_length, 512);
    }
}
