//! Centered short-time Fourier transform magnitudes.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::SpectrogramConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward and inverse plans of length `n`, reused across calls.
fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

/// `|z|` without `hypot`'s overflow guard, which is not needed here and
/// dominates the STFT cost.
fn abs(z: Complex<f64>) -> f64 {
    (z.re * z.re + z.im * z.im).sqrt()
}

/// Maps a position of the reflect-padded signal back onto `0..len`.
fn reflect(i: isize, len: usize) -> usize {
    let last = len as isize - 1;
    let j = if i < 0 {
        -i
    } else if i > last {
        2 * last - i
    } else {
        i
    };
    j as usize
}

/// Frame layout for a signal of `len` samples.
#[derive(Debug, Clone, Copy)]
struct Framing {
    window: usize,
    hop: usize,
    frames: usize,
    bins: usize,
}

impl Framing {
    fn new(len: usize, window: usize, hop: usize) -> Result<Self> {
        if !window.is_power_of_two() {
            return Err(Error::Config(format!("window length {window} is not a power of two")));
        }
        if hop == 0 || hop > window {
            return Err(Error::Config(format!("hop {hop} must lie in 1..={window}")));
        }
        // Reflection needs at least window/2 + 1 samples.
        if len <= window / 2 {
            return Err(Error::Shape(format!(
                "signal of {len} samples is too short for window {window}"
            )));
        }
        Ok(Self {
            window,
            hop,
            frames: len / hop + 1,
            bins: window / 2 + 1,
        })
    }

    /// Signal index feeding tap `n` of frame `f`.
    fn source(&self, f: usize, n: usize, len: usize) -> usize {
        reflect((f * self.hop + n) as isize - (self.window / 2) as isize, len)
    }
}

/// Complex spectra of every frame, `[frames × bins]`.
fn spectra(signal: &[f64], fr: Framing, win: &[f64], fft: &Arc<dyn Fft<f64>>) -> Vec<Complex<f64>> {
    let len = signal.len();
    let mut out = Vec::with_capacity(fr.frames * fr.bins);
    let mut buf = vec![Complex::new(0.0, 0.0); fr.window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let half = fr.window / 2;
    for f in 0..fr.frames {
        let start = f * fr.hop;
        if start >= half && start - half + fr.window <= len {
            let src = &signal[start - half..start - half + fr.window];
            for ((b, &w), &x) in buf.iter_mut().zip(win).zip(src) {
                *b = Complex::new(w * x, 0.0);
            }
        } else {
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(win[n] * signal[fr.source(f, n, len)], 0.0);
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend_from_slice(&buf[..fr.bins]);
    }
    out
}

/// Hann-windowed, reflect-padded magnitude STFT, `[bins × frames]`.
pub fn stft_magnitude(signal: &[f64], cfg: &SpectrogramConfig) -> Result<Tensor> {
    let fr = Framing::new(signal.len(), cfg.window_length, cfg.hop_length)?;
    let (fft, _) = plans(fr.window);
    let spec = spectra(signal, fr, &hann_window(fr.window), &fft);
    let mut out = Tensor::zeros(&[fr.bins, fr.frames]);
    for f in 0..fr.frames {
        for k in 0..fr.bins {
            out.data_mut()[k * fr.frames + f] = abs(spec[f * fr.bins + k]);
        }
    }
    Ok(out)
}

impl Graph {
    /// Differentiable magnitude STFT: `[N × C × L]` → `[N × C × bins × frames]`.
    pub fn stft_magnitude(&mut self, x: Var, window: usize, hop: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::Shape(format!("stft expects [N × C × L], got {shape:?}")));
        }
        let (rows, len) = (shape[0] * shape[1], shape[2]);
        let fr = Framing::new(len, window, hop)?;
        let (fwd, inv) = plans(window);
        let win = hann_window(window);

        let xv = self.value(x).data();
        let mut all_spec = Vec::with_capacity(rows * fr.frames * fr.bins);
        let mut mags = vec![0.0; rows * fr.bins * fr.frames];
        for r in 0..rows {
            let spec = spectra(&xv[r * len..(r + 1) * len], fr, &win, &fwd);
            let m = &mut mags[r * fr.bins * fr.frames..][..fr.bins * fr.frames];
            for f in 0..fr.frames {
                for k in 0..fr.bins {
                    m[k * fr.frames + f] = abs(spec[f * fr.bins + k]);
                }
            }
            all_spec.extend(spec);
        }
        let value = Tensor::new(vec![shape[0], shape[1], fr.bins, fr.frames], mags).unwrap();

        Ok(self.op(
            value,
            &[x],
            Box::new(move |args| {
                let gm = args.grad.data();
                let mut gx = vec![0.0; rows * len];
                let mut buf = vec![Complex::new(0.0, 0.0); fr.window];
                let mut scratch = vec![Complex::new(0.0, 0.0); inv.get_inplace_scratch_len()];
                for r in 0..rows {
                    let g_row = &gm[r * fr.bins * fr.frames..][..fr.bins * fr.frames];
                    let spec = &all_spec[r * fr.frames * fr.bins..][..fr.frames * fr.bins];
                    let gxr = &mut gx[r * len..(r + 1) * len];
                    for f in 0..fr.frames {
                        buf.fill(Complex::new(0.0, 0.0));
                        for k in 0..fr.bins {
                            let z = spec[f * fr.bins + k];
                            let mag = abs(z);
                            if mag > 0.0 {
                                buf[k] = z * (g_row[k * fr.frames + f] / mag);
                            }
                        }
                        // Σₖ Gₖ·e^{+2πikn/N}; its real part is ∂loss/∂(windowed frame).
                        inv.process_with_scratch(&mut buf, &mut scratch);
                        for n in 0..fr.window {
                            gxr[fr.source(f, n, len)] += win[n] * buf[n].re;
                        }
                    }
                }
                vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), gx).unwrap())]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(window: usize, hop: usize) -> SpectrogramConfig {
        SpectrogramConfig {
            window_length: window,
            hop_length: hop,
            n_mels: 8,
            f_min: 0.0,
            f_max: 22_050.0,
            sample_rate: 44_100.0,
        }
    }

    /// Direct DFT of one centered frame.
    fn dft_frame(signal: &[f64], window: usize, start: isize) -> Vec<f64> {
        let win = hann_window(window);
        let frame: Vec<f64> = (0..window)
            .map(|n| win[n] * signal[reflect(start + n as isize, signal.len())])
            .collect();
        (0..=window / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &v) in frame.iter().enumerate() {
                    let th = 2.0 * PI * (k * n) as f64 / window as f64;
                    re += v * th.cos();
                    im -= v * th.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn zero_signal_has_zero_magnitude() {
        let m = stft_magnitude(&[0.0; 300], &cfg(64, 16)).unwrap();
        assert_eq!(m.max_abs(), 0.0);
        assert_eq!(m.shape(), &[33, 300 / 16 + 1]);
    }

    #[test]
    fn matches_direct_dft() {
        let signal: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let m = stft_magnitude(&signal, &cfg(32, 8)).unwrap();
        let frames = m.dim(1);
        for f in [0usize, 3, frames - 1] {
            let expect = dft_frame(&signal, 32, (f * 8) as isize - 16);
            for (k, e) in expect.iter().enumerate() {
                assert!((m.data()[k * frames + f] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bin_centred_sine_concentrates_energy() {
        let window = 256;
        let k0 = 20;
        let signal: Vec<f64> = (0..2048)
            .map(|i| (2.0 * PI * k0 as f64 * i as f64 / window as f64).sin())
            .collect();
        let m = stft_magnitude(&signal, &cfg(window, 64)).unwrap();
        let frames = m.dim(1);
        let f = frames / 2;
        let total: f64 = (0..m.dim(0)).map(|k| m.data()[k * frames + f].powi(2)).sum();
        // The Hann main lobe spans k0 ± 1.
        let lobe: f64 = (k0 - 1..=k0 + 1).map(|k| m.data()[k * frames + f].powi(2)).sum();
        let peak = m.data()[k0 * frames + f].powi(2);
        assert!(lobe / total > 0.999);
        assert!(peak / total > 0.6);
        assert!((0..m.dim(0)).all(|k| m.data()[k * frames + f] <= m.data()[k0 * frames + f]));
    }

    #[test]
    fn parseval_per_frame() {
        let signal: Vec<f64> = (0..512).map(|i| ((i as f64) * 0.31).sin() + 0.2 * ((i as f64) * 1.7).cos()).collect();
        let window = 64;
        let m = stft_magnitude(&signal, &cfg(window, 16)).unwrap();
        let frames = m.dim(1);
        let win = hann_window(window);
        for f in [2usize, 10, 20] {
            let start = (f * 16) as isize - 32;
            let energy: f64 = (0..window)
                .map(|n| (win[n] * signal[reflect(start + n as isize, 512)]).powi(2))
                .sum();
            // One-sided spectrum: interior bins count twice.
            let spec: f64 = (0..=window / 2)
                .map(|k| {
                    let w = if k == 0 || k == window / 2 { 1.0 } else { 2.0 };
                    w * m.data()[k * frames + f].powi(2)
                })
                .sum::<f64>()
                / window as f64;
            assert!(((spec - energy) / energy).abs() < 1e-6, "frame {f}: {spec} vs {energy}");
        }
    }

    #[test]
    fn short_signal_is_an_error() {
        assert!(stft_magnitude(&[0.0; 32], &cfg(64, 16)).is_err());
        assert!(stft_magnitude(&[0.0; 400], &cfg(48, 12)).is_err());
    }

    #[test]
    fn graph_op_matches_plain_function() {
        let signal: Vec<f64> = (0..130).map(|i| (i as f64 * 0.2).sin()).collect();
        let plain = stft_magnitude(&signal, &cfg(32, 8)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 130], signal).unwrap());
        let y = g.stft_magnitude(x, 32, 8).unwrap();
        assert_eq!(g.value(y).data(), plain.data());
    }
}
