//! Triangular mel filterbanks on the HTK mel scale.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::stft::stft_magnitude;
use super::SpectrogramConfig;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Sparse filterbank: each row stores its first nonzero bin and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_bins: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(cfg: &SpectrogramConfig) -> Self {
        let n_bins = cfg.window_length / 2 + 1;
        let lo = hz_to_mel(cfg.f_min);
        let hi = hz_to_mel(cfg.f_max);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate / cfg.window_length as f64;
        let rows = (0..cfg.n_mels)
            .map(|m| {
                let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = ((f - left) / (centre - left)).min((right - f) / (right - centre));
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => (start, weights.iter().map(|w| w.1).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();
        Self { n_bins, rows }
    }

    /// Shared filterbank for `cfg`, built once per thread.
    pub fn cached(cfg: &SpectrogramConfig) -> Arc<Self> {
        thread_local! {
            static CACHE: RefCell<HashMap<[u64; 5], Arc<MelFilterbank>>> = RefCell::new(HashMap::new());
        }
        let key = [
            cfg.window_length as u64,
            cfg.n_mels as u64,
            cfg.f_min.to_bits(),
            cfg.f_max.to_bits(),
            cfg.sample_rate.to_bits(),
        ];
        CACHE.with(|c| c.borrow_mut().entry(key).or_insert_with(|| Arc::new(Self::new(cfg))).clone())
    }

    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Dense `[n_mels × bins]` matrix.
    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows.len(), self.n_bins]);
        for (m, (start, w)) in self.rows.iter().enumerate() {
            t.row_mut(m)[*start..start + w.len()].copy_from_slice(w);
        }
        t
    }

    /// `[bins × frames]` → `[n_mels × frames]`.
    pub(crate) fn apply_raw(&self, spec: &[f64], frames: usize, out: &mut [f64]) {
        for (m, (start, w)) in self.rows.iter().enumerate() {
            let o = &mut out[m * frames..(m + 1) * frames];
            o.fill(0.0);
            for (j, &wk) in w.iter().enumerate() {
                let s = &spec[(start + j) * frames..(start + j + 1) * frames];
                for (a, &b) in o.iter_mut().zip(s) {
                    *a += wk * b;
                }
            }
        }
    }

    fn apply_transpose_raw(&self, g: &[f64], frames: usize, out: &mut [f64]) {
        out.fill(0.0);
        for (m, (start, w)) in self.rows.iter().enumerate() {
            let gm = &g[m * frames..(m + 1) * frames];
            for (j, &wk) in w.iter().enumerate() {
                let o = &mut out[(start + j) * frames..(start + j + 1) * frames];
                for (a, &b) in o.iter_mut().zip(gm) {
                    *a += wk * b;
                }
            }
        }
    }
}

/// Mel energies `[n_mels × frames]` of a magnitude STFT. No log is applied.
pub fn mel_spectrogram(signal: &[f64], cfg: &SpectrogramConfig) -> Result<Tensor> {
    cfg.validate()?;
    let mag = stft_magnitude(signal, cfg)?;
    let fb = MelFilterbank::cached(cfg);
    let frames = mag.dim(1);
    let mut out = vec![0.0; fb.n_mels() * frames];
    fb.apply_raw(mag.data(), frames, &mut out);
    Tensor::new(vec![fb.n_mels(), frames], out)
}

impl Graph {
    /// `[N × C × bins × F]` → `[N × C × n_mels × F]`.
    pub fn mel_project(&mut self, spec: Var, fb: Arc<MelFilterbank>) -> Var {
        let shape = self.shape(spec).to_vec();
        assert_eq!(shape.len(), 4, "mel_project expects [N × C × bins × F]");
        assert_eq!(shape[2], fb.n_bins(), "mel_project: bin count mismatch");
        let (rows, bins, frames) = (shape[0] * shape[1], shape[2], shape[3]);
        let n_mels = fb.n_mels();
        let mut out = vec![0.0; rows * n_mels * frames];
        let sv = self.value(spec).data();
        for r in 0..rows {
            fb.apply_raw(
                &sv[r * bins * frames..(r + 1) * bins * frames],
                frames,
                &mut out[r * n_mels * frames..(r + 1) * n_mels * frames],
            );
        }
        let value = Tensor::new(vec![shape[0], shape[1], n_mels, frames], out).unwrap();
        self.op(
            value,
            &[spec],
            Box::new(move |args| {
                let mut gs = vec![0.0; rows * bins * frames];
                for r in 0..rows {
                    fb.apply_transpose_raw(
                        &args.grad.data()[r * n_mels * frames..(r + 1) * n_mels * frames],
                        frames,
                        &mut gs[r * bins * frames..(r + 1) * bins * frames],
                    );
                }
                vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), gs).unwrap())]
            }),
        )
    }
}
