//! Linear-phase windowed-sinc low-pass filtering.

use std::f64::consts::PI;

use crate::audio_io::MultichannelWave;
use crate::tensor::Tensor;

pub const ANCHOR_CUTOFF_HZ: f64 = 3500.0;
const ANCHOR_TRANSITION_HZ: f64 = 1000.0;
const ANCHOR_ATTENUATION_DB: f64 = 70.0;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-window low-pass design with unit DC gain and an odd tap count.
///
/// `transition_hz` is the full width of the transition band centred on
/// `cutoff_hz`; `attenuation_db` is the stopband target.
pub fn kaiser_lowpass(cutoff_hz: f64, transition_hz: f64, attenuation_db: f64, sample_rate: f64) -> Vec<f64> {
    let a = attenuation_db;
    let beta = if a > 50.0 {
        0.1102 * (a - 8.7)
    } else if a >= 21.0 {
        0.5842 * (a - 21.0).powf(0.4) + 0.07886 * (a - 21.0)
    } else {
        0.0
    };
    let dw = 2.0 * PI * transition_hz / sample_rate;
    let mut n = ((a - 8.0) / (2.285 * dw)).ceil() as usize + 1;
    if n.is_multiple_of(2) {
        n += 1;
    }
    let m = (n - 1) as f64 / 2.0;
    let fc = cutoff_hz / sample_rate;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - m;
            let sinc = if t == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * t).sin() / (PI * t) };
            let r = t / m;
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Convolves with an odd-length symmetric filter and removes its delay, so
/// output sample `t` lines up with input sample `t`. Zero outside the signal.
pub fn filter_zero_delay(x: &[f64], h: &[f64]) -> Vec<f64> {
    let half = (h.len() / 2) as isize;
    let len = x.len() as isize;
    (0..len)
        .map(|t| {
            let lo = (t - half).max(0);
            let hi = (t + half).min(len - 1);
            (lo..=hi)
                .map(|s| h[(t - s + half) as usize] * x[s as usize])
                .sum()
        })
        .collect()
}

/// 3.5 kHz low-passed copy of every channel.
pub fn lowpass_anchor(wave: &MultichannelWave) -> MultichannelWave {
    let sr = wave.sample_rate as f64;
    let h = kaiser_lowpass(ANCHOR_CUTOFF_HZ, ANCHOR_TRANSITION_HZ, ANCHOR_ATTENUATION_DB, sr);
    let rows: Vec<Vec<f64>> = (0..wave.n_channels())
        .map(|c| filter_zero_delay(wave.samples.row(c), &h))
        .collect();
    MultichannelWave {
        sample_rate: wave.sample_rate,
        samples: Tensor::from_rows(&rows).unwrap(),
    }
}
