//! Synthetic B-format scenes: a few harmonic point sources at fixed
//! directions over a diffuse isotropic noise bed.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ambisonics::harmonics::real_sh;
use crate::ambisonics::{AmbisonicsOrder, BFormatSignal, SpeakerLayout};
use crate::audio_io::{write_wav, MultichannelWave};
use crate::error::Result;
use crate::tensor::Tensor;

const DIFFUSE_DIRECTIONS: usize = 24;
const PEAK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
struct Source {
    azimuth: f64,
    elevation: f64,
    f0: f64,
    partials: usize,
    tremolo_hz: f64,
}

/// Fixed geometry and timbre of one scene; each sample drawn from it
/// varies phases, modulation and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecipe {
    sources: Vec<Source>,
    /// Source-to-diffuse power ratio in dB.
    snr_db: f64,
    /// One-pole coefficient colouring the diffuse noise.
    noise_pole: f64,
}

impl SceneRecipe {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let n = rng.random_range(1..=3);
        let sources = (0..n)
            .map(|_| Source {
                azimuth: rng.random_range(-PI..PI),
                elevation: rng.random_range(-1.0f64..1.0).asin(),
                f0: 110.0 * 2f64.powf(rng.random_range(0.0..3.0)),
                partials: rng.random_range(1..=4),
                tremolo_hz: rng.random_range(0.5..4.0),
            })
            .collect();
        Self {
            sources,
            snr_db: rng.random_range(0.0..20.0),
            noise_pole: rng.random_range(0.0..0.9),
        }
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// One excerpt of `n_frames` samples at `order`, peak-normalized to 0.5.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        order: AmbisonicsOrder,
        sample_rate: u32,
        n_frames: usize,
    ) -> Result<BFormatSignal> {
        let ch = order.channels();
        let sr = sample_rate as f64;
        let mut direct = vec![0.0; ch * n_frames];
        for s in &self.sources {
            let phases: Vec<f64> = (0..s.partials).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let lfo_phase = rng.random_range(0.0..2.0 * PI);
            let gains = real_sh(order.value(), s.azimuth, s.elevation);
            for t in 0..n_frames {
                let time = t as f64 / sr;
                let env = 0.6 + 0.4 * (2.0 * PI * s.tremolo_hz * time + lfo_phase).sin();
                let v: f64 = phases
                    .iter()
                    .enumerate()
                    .map(|(k, ph)| (2.0 * PI * s.f0 * (k + 1) as f64 * time + ph).sin() / (k + 1) as f64)
                    .sum::<f64>()
                    * env;
                for (c, g) in gains.iter().enumerate() {
                    direct[c * n_frames + t] += g * v;
                }
            }
        }

        let mut diffuse = vec![0.0; ch * n_frames];
        let layout = SpeakerLayout::spread(DIFFUSE_DIRECTIONS)?;
        for &(az, el) in &layout.directions {
            let gains = real_sh(order.value(), az, el);
            let mut state = 0.0;
            for t in 0..n_frames {
                let w: f64 = StandardNormal.sample(rng);
                state = self.noise_pole * state + (1.0 - self.noise_pole) * w;
                for (c, g) in gains.iter().enumerate() {
                    diffuse[c * n_frames + t] += g * state;
                }
            }
        }

        // Powers measured on the omnidirectional channel.
        let power = |x: &[f64]| x[..n_frames].iter().map(|v| v * v).sum::<f64>() / n_frames as f64;
        let (pd, pn) = (power(&direct), power(&diffuse));
        let noise_gain = if pn > 0.0 {
            (pd / pn / 10f64.powf(self.snr_db / 10.0)).sqrt()
        } else {
            0.0
        };
        let mut data: Vec<f64> = direct.iter().zip(&diffuse).map(|(d, n)| d + noise_gain * n).collect();
        let peak = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            data.iter_mut().for_each(|v| *v *= PEAK / peak);
        }
        BFormatSignal::new(order, sample_rate, Tensor::new(vec![ch, n_frames], data)?)
    }
}

/// In-memory scenes: `per_scene` excerpts for each of `n_scenes` recipes,
/// grouped by scene.
pub fn synthesize_scenes(
    n_scenes: usize,
    per_scene: usize,
    order: AmbisonicsOrder,
    sample_rate: u32,
    n_frames: usize,
    seed: u64,
) -> Result<Vec<Vec<BFormatSignal>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_scenes)
        .map(|_| {
            let recipe = SceneRecipe::random(&mut rng);
            (0..per_scene)
                .map(|_| recipe.sample(&mut rng, order, sample_rate, n_frames))
                .collect()
        })
        .collect()
}

/// Writes synthetic scenes as 16-bit wavs under `dir/sceneK/`, returning
/// the files grouped by scene label.
pub fn write_synthetic_scenes(
    dir: &Path,
    n_scenes: usize,
    per_scene: usize,
    order: AmbisonicsOrder,
    sample_rate: u32,
    seconds: f64,
    seed: u64,
) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let n_frames = (seconds * sample_rate as f64).round() as usize;
    let scenes = synthesize_scenes(n_scenes, per_scene, order, sample_rate, n_frames, seed)?;
    let mut out = Vec::with_capacity(n_scenes);
    for (k, samples) in scenes.into_iter().enumerate() {
        let label = format!("scene{k}");
        let sub = dir.join(&label);
        std::fs::create_dir_all(&sub)?;
        let mut files = Vec::with_capacity(per_scene);
        for (i, s) in samples.into_iter().enumerate() {
            let path = sub.join(format!("{label}_{i:03}.wav"));
            let wave: MultichannelWave = s.into_wave();
            write_wav(&wave, 16, &path)?;
            files.push(path);
        }
        out.push((label, files));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excerpts_are_bounded_and_deterministic() {
        let a = synthesize_scenes(2, 2, AmbisonicsOrder::new(3), 44_100, 2000, 9).unwrap();
        let b = synthesize_scenes(2, 2, AmbisonicsOrder::new(3), 44_100, 2000, 9).unwrap();
        assert_eq!(a, b);
        for s in a.iter().flatten() {
            assert_eq!(s.samples().shape(), &[16, 2000]);
            let peak = s.samples().max_abs();
            assert!((peak - PEAK).abs() < 1e-12);
        }
    }

    #[test]
    fn single_source_without_noise_is_a_plane_wave() {
        // A recipe with an infinite SNR reduces to one encoded source, so
        // every channel is the omni channel times that direction's gain.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = SceneRecipe::random(&mut rng);
        r.sources.truncate(1);
        r.snr_db = 1e9;
        let s = r.sample(&mut rng, AmbisonicsOrder::new(2), 44_100, 500).unwrap();
        let gains = real_sh(2, r.sources[0].azimuth, r.sources[0].elevation);
        let w = s.samples().row(0).to_vec();
        for (c, g) in gains.iter().enumerate() {
            for (x, w0) in s.samples().row(c).iter().zip(&w) {
                assert!((x - g * w0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scenes_are_spatially_distinct() {
        let scenes = synthesize_scenes(3, 1, AmbisonicsOrder::new(1), 44_100, 4000, 1).unwrap();
        let dirs: Vec<Vec<f64>> = scenes
            .iter()
            .map(|s| crate::losses::normalized_covariance(s[0].samples()).unwrap().into_data())
            .collect();
        assert_ne!(dirs[0], dirs[1]);
        assert_ne!(dirs[1], dirs[2]);
    }
}
