//! Multi-scale log-mel reconstruction loss.

use std::sync::Arc;

use crate::dsp::{mel_spectrogram, MelFilterbank, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Floor inside the logarithm.
pub const LOG_EPS: f64 = 1e-5;

fn log_mel(g: &mut Graph, x: Var, cfg: &SpectrogramConfig, fb: &Arc<MelFilterbank>) -> Result<Var> {
    let spec = g.stft_magnitude(x, cfg.window_length, cfg.hop_length)?;
    let mel = g.mel_project(spec, fb.clone());
    Ok(g.log_eps(mel, LOG_EPS))
}

/// `ln(mel + eps)` of every row of `[N × C × L]`, as `[N × C × n_mels × F]`.
fn log_mel_values(x: &Tensor, cfg: &SpectrogramConfig) -> Result<Tensor> {
    let (rows, len) = (x.dim(0) * x.dim(1), x.dim(2));
    let mut data = Vec::new();
    let mut dims = (0, 0);
    for r in 0..rows {
        let m = mel_spectrogram(&x.data()[r * len..(r + 1) * len], cfg)?;
        dims = (m.dim(0), m.dim(1));
        data.extend(m.data().iter().map(|v| (v + LOG_EPS).ln()));
    }
    Tensor::new(vec![x.dim(0), x.dim(1), dims.0, dims.1], data)
}

impl Graph {
    /// Mean over scales of the mean absolute log-mel difference between
    /// `reconstruction` (`[N × C × L]`) and a constant reference. Every
    /// channel contributes equally, so the result is the expectation over
    /// channels of the per-channel loss.
    pub fn multiscale_mel_loss(
        &mut self,
        reconstruction: Var,
        reference: &Tensor,
        scales: &[SpectrogramConfig],
    ) -> Result<Var> {
        let shape = self.shape(reconstruction).to_vec();
        if shape.len() != 3 || reference.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "mel loss: reconstruction {:?} vs reference {:?}",
                shape,
                reference.shape()
            )));
        }
        if scales.is_empty() {
            return Err(Error::Config("mel loss needs at least one scale".into()));
        }
        let mut terms = Vec::with_capacity(scales.len());
        for cfg in scales {
            cfg.validate()?;
            let fb = MelFilterbank::cached(cfg);
            let target = log_mel_values(reference, cfg)?;
            let pred = log_mel(self, reconstruction, cfg, &fb)?;
            terms.push((self.l1_to(pred, &target), 1.0 / scales.len() as f64));
        }
        Ok(self.weighted_sum(&terms))
    }
}

/// Value of the multi-scale mel loss for `[C × L]` signals.
pub fn multiscale_mel_loss(reference: &Tensor, reconstruction: &Tensor, scales: &[SpectrogramConfig]) -> Result<f64> {
    if reference.shape() != reconstruction.shape() || reference.rank() != 2 {
        return Err(Error::Shape(format!(
            "mel loss: reference {:?} vs reconstruction {:?}",
            reference.shape(),
            reconstruction.shape()
        )));
    }
    if scales.is_empty() {
        return Err(Error::Config("mel loss needs at least one scale".into()));
    }
    let shape = vec![1, reference.dim(0), reference.dim(1)];
    let reference = reference.clone().reshape(shape.clone())?;
    let reconstruction = reconstruction.clone().reshape(shape)?;
    let mut total = 0.0;
    for cfg in scales {
        cfg.validate()?;
        let a = log_mel_values(&reference, cfg)?;
        let b = log_mel_values(&reconstruction, cfg)?;
        let l1 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>();
        total += l1 / a.numel() as f64;
    }
    Ok(total / scales.len() as f64)
}
