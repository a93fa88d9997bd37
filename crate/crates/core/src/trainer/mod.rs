//! Alternating GAN training, validation curves, and the transfer-versus-
//! random initialization comparison.

pub mod config;
pub mod optim;
pub mod scenes;
pub mod step;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ambisonics::AmbisonicsOrder;
use crate::audio_io::manifest::Split;
use crate::audio_io::{frame_excerpts, read_wav, DatasetManifest};
use crate::discriminators::DiscriminatorSuite;
use crate::dsp::{mel_scales_for_length, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::graph::ParamSet;
use crate::losses::{covariance_loss, multiscale_mel_loss};
use crate::model::{transfer_from_mono, GeneratorModel, ModelCheckpoint};
use crate::tensor::Tensor;

pub use config::{ModelSize, TrainConfig};
pub use optim::AdamW;
pub use scenes::{synthesize_scenes, write_synthetic_scenes, SceneRecipe};
pub use step::{StepReport, TrainState};

/// Equal-length `[C × L]` excerpts split into training and held-out sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub sample_rate: u32,
    pub train: Vec<Tensor>,
    pub heldout: Vec<Tensor>,
}

impl TrainingData {
    pub fn new(sample_rate: u32, train: Vec<Tensor>, heldout: Vec<Tensor>) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Dataset("no training excerpts".into()))?;
        if heldout.is_empty() {
            return Err(Error::Dataset("no held-out excerpts".into()));
        }
        let shape = first.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::Dataset(format!("excerpts must be [C × L], got {shape:?}")));
        }
        if let Some(bad) = train.iter().chain(&heldout).find(|t| t.shape() != shape.as_slice()) {
            return Err(Error::Dataset(format!(
                "excerpt shape {:?} differs from {shape:?}",
                bad.shape()
            )));
        }
        Ok(Self {
            sample_rate,
            train,
            heldout,
        })
    }

    /// Excerpts of `excerpt_seconds` from every manifest file, hop equal to
    /// the excerpt length.
    pub fn from_manifest(manifest: &DatasetManifest, excerpt_seconds: f64, sample_rate: u32) -> Result<Self> {
        let load = |split| -> Result<Vec<Tensor>> {
            let mut out = Vec::new();
            for path in manifest.paths(split) {
                let wave = read_wav(path)?;
                if wave.sample_rate != sample_rate {
                    return Err(Error::Dataset(format!(
                        "{}: sample rate {} (expected {sample_rate})",
                        path.display(),
                        wave.sample_rate
                    )));
                }
                out.extend(
                    frame_excerpts(&wave, excerpt_seconds, excerpt_seconds)?
                        .into_iter()
                        .map(|w| w.samples),
                );
            }
            Ok(out)
        };
        Self::new(sample_rate, load(Split::Train)?, load(Split::Heldout)?)
    }

    /// Synthetic scenes, the first ⌊7n/8⌋ samples of each scene for
    /// training and the rest held out.
    pub fn synthetic(
        n_scenes: usize,
        per_scene: usize,
        order: AmbisonicsOrder,
        sample_rate: u32,
        n_frames: usize,
        seed: u64,
    ) -> Result<Self> {
        let scenes = synthesize_scenes(n_scenes, per_scene, order, sample_rate, n_frames, seed)?;
        let n_train = 7 * per_scene / 8;
        let (mut train, mut heldout) = (Vec::new(), Vec::new());
        for samples in scenes {
            for (i, s) in samples.into_iter().enumerate() {
                let t = s.samples().clone();
                if i < n_train {
                    train.push(t)
                } else {
                    heldout.push(t)
                }
            }
        }
        Self::new(sample_rate, train, heldout)
    }

    pub fn n_channels(&self) -> usize {
        self.train[0].dim(0)
    }

    pub fn excerpt_len(&self) -> usize {
        self.train[0].dim(1)
    }

    /// The omnidirectional (first) channel only.
    pub fn mono(&self) -> Self {
        let first = |ts: &[Tensor]| -> Vec<Tensor> {
            ts.iter()
                .map(|t| Tensor::new(vec![1, t.dim(1)], t.row(0).to_vec()).unwrap())
                .collect()
        };
        Self {
            sample_rate: self.sample_rate,
            train: first(&self.train),
            heldout: first(&self.heldout),
        }
    }
}

/// Anything mapping `[C × L]` audio to a same-shaped reconstruction.
pub trait Reconstruct {
    fn reconstruct(&self, audio: &Tensor) -> Result<Tensor>;
}

/// A generator with concrete parameters.
pub struct GeneratorInference<'a> {
    pub model: &'a GeneratorModel,
    pub params: &'a ParamSet,
}

impl Reconstruct for GeneratorInference<'_> {
    fn reconstruct(&self, audio: &Tensor) -> Result<Tensor> {
        Ok(self.model.reconstruct(self.params, audio)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRecord {
    pub step: usize,
    pub mel_val: f64,
    pub cov_val: f64,
    pub wall_time_s: f64,
}

impl ValidationRecord {
    /// Equality ignoring wall time.
    pub fn same_values(&self, other: &Self) -> bool {
        self.step == other.step
            && self.mel_val.to_bits() == other.mel_val.to_bits()
            && self.cov_val.to_bits() == other.cov_val.to_bits()
    }
}

/// Mean mel and covariance losses over the held-out excerpts.
pub fn validate(
    model: &dyn Reconstruct,
    heldout: &[Tensor],
    scales: &[SpectrogramConfig],
    step: usize,
    wall_time_s: f64,
) -> Result<ValidationRecord> {
    if heldout.is_empty() {
        return Err(Error::Dataset("validation needs at least one held-out excerpt".into()));
    }
    let (mut mel, mut cov) = (0.0, 0.0);
    for x in heldout {
        let y = model.reconstruct(x)?;
        mel += multiscale_mel_loss(x, &y, scales)?;
        cov += covariance_loss(x, &y)?;
    }
    let n = heldout.len() as f64;
    Ok(ValidationRecord {
        step,
        mel_val: mel / n,
        cov_val: cov / n,
        wall_time_s,
    })
}

pub const CURVE_HEADER: &str = "step,mel_val,cov_val,wall_time_s";

pub fn curve_to_csv(records: &[ValidationRecord]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{:.3}", r.step, r.mel_val, r.cov_val, r.wall_time_s);
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<ValidationRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::Dataset(format!("curve header must be `{CURVE_HEADER}`")));
    }
    let bad = |l: &str| Error::Dataset(format!("bad curve line `{l}`"));
    let mut out: Vec<ValidationRecord> = Vec::new();
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 4 {
            return Err(bad(l));
        }
        let r = ValidationRecord {
            step: f[0].parse().map_err(|_| bad(l))?,
            mel_val: f[1].parse().map_err(|_| bad(l))?,
            cov_val: f[2].parse().map_err(|_| bad(l))?,
            wall_time_s: f[3].parse().map_err(|_| bad(l))?,
        };
        if out.last().is_some_and(|p| p.step >= r.step) {
            return Err(Error::Dataset(format!("curve steps not increasing at `{l}`")));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_curve(path: impl AsRef<Path>, records: &[ValidationRecord]) -> Result<()> {
    std::fs::write(path, curve_to_csv(records))?;
    Ok(())
}

/// Generator initialization.
#[derive(Debug, Clone)]
pub enum Init {
    Random,
    /// Replicate a single-channel checkpoint across the data's channels.
    Transfer(ModelCheckpoint),
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub generator: ModelCheckpoint,
    pub discriminator: ModelCheckpoint,
    pub curve: Vec<ValidationRecord>,
    /// Report of the last update, if any.
    pub last_step: Option<StepReport>,
}

/// Independent random streams derived from the run seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_GENERATOR: u64 = 1;
const STREAM_DISCRIMINATOR: u64 = 2;
const STREAM_BATCHES: u64 = 3;

/// Mel scales the config allows on the data's excerpt length.
pub fn training_scales(config: &TrainConfig, excerpt_len: usize) -> Result<Vec<SpectrogramConfig>> {
    let scales: Vec<_> = mel_scales_for_length(config.sample_rate as f64, excerpt_len)
        .into_iter()
        .filter(|s| s.window_length <= config.mel_max_window)
        .collect();
    if scales.is_empty() {
        return Err(Error::Config(format!(
            "excerpts of {excerpt_len} samples are too short for any mel scale"
        )));
    }
    Ok(scales)
}

/// Builds the initial state of a run.
pub fn init_state(config: &TrainConfig, data: &TrainingData, init: &Init) -> Result<TrainState> {
    config.validate()?;
    if data.sample_rate != config.sample_rate {
        return Err(Error::Config(format!(
            "data sample rate {} differs from config {}",
            data.sample_rate, config.sample_rate
        )));
    }
    let channels = data.n_channels();
    let len = data.excerpt_len();
    let expected = config.generator_config(channels);
    let (gen_cfg, gen_params) = match init {
        Init::Random => {
            let model = GeneratorModel::new(expected.clone())?;
            let params = model.init_params(&mut stream(config.seed, STREAM_GENERATOR));
            (expected, params)
        }
        Init::Transfer(mono) => {
            let ck = transfer_from_mono(mono, channels)?;
            let cfg = ck.generator_config()?;
            if cfg != expected {
                return Err(Error::Config(format!(
                    "transferred model {cfg:?} does not match the configured model {expected:?}"
                )));
            }
            (cfg, ck.tensors)
        }
    };
    let generator = GeneratorModel::new(gen_cfg)?;
    let suite = DiscriminatorSuite::new(config.discriminator_config(channels))?;
    if suite.config().min_length() > len {
        return Err(Error::Config(format!(
            "excerpts of {len} samples are shorter than the discriminators need ({})",
            suite.config().min_length()
        )));
    }
    let disc_params = suite.init_params(&mut stream(config.seed, STREAM_DISCRIMINATOR));
    let scales = training_scales(config, len)?;
    Ok(TrainState::new(config, generator, gen_params, suite, disc_params, scales))
}

/// Trains for `config.steps` updates, validating at step 0 and every
/// `validation_interval` updates. `observe` sees every record as it is
/// produced.
pub fn run_training_observed(
    config: &TrainConfig,
    data: &TrainingData,
    init: &Init,
    observe: &mut dyn FnMut(&ValidationRecord, Option<&StepReport>),
) -> Result<TrainingOutcome> {
    let mut state = init_state(config, data, init)?;
    let mut batches = stream(config.seed, STREAM_BATCHES);
    let start = Instant::now();
    let mut curve = Vec::with_capacity(config.steps / config.validation_interval + 1);
    let mut record = |state: &TrainState, report: Option<&StepReport>| -> Result<()> {
        let inf = GeneratorInference {
            model: &state.generator,
            params: &state.gen_params,
        };
        let r = validate(&inf, &data.heldout, &state.scales, state.step, start.elapsed().as_secs_f64())?;
        observe(&r, report);
        curve.push(r);
        Ok(())
    };
    record(&state, None)?;
    let mut last = None;
    for step in 1..=config.steps {
        let picks: Vec<Tensor> = (0..config.batch_size)
            .map(|_| data.train[batches.random_range(0..data.train.len())].clone())
            .collect();
        let report = state.train_step(&Tensor::stack(&picks)?)?;
        if step % config.validation_interval == 0 {
            record(&state, Some(&report))?;
        }
        last = Some(report);
    }
    let text = config.to_text();
    Ok(TrainingOutcome {
        generator: ModelCheckpoint::generator(state.generator.config(), state.gen_params, text.clone()),
        discriminator: state.discriminators.checkpoint(state.disc_params, text),
        curve,
        last_step: last,
    })
}

pub fn run_training(config: &TrainConfig, data: &TrainingData, init: &Init) -> Result<TrainingOutcome> {
    run_training_observed(config, data, init, &mut |_, _| {})
}

/// Single-channel pretraining on the omnidirectional channel.
pub fn pretrain_mono(config: &TrainConfig, data: &TrainingData) -> Result<TrainingOutcome> {
    run_training(config, &data.mono(), &Init::Random)
}

#[derive(Debug, Clone)]
pub struct InitComparison {
    pub transfer: TrainingOutcome,
    pub random: TrainingOutcome,
}

/// Two runs differing only in generator initialization.
pub fn compare_inits(config: &TrainConfig, data: &TrainingData, mono: &ModelCheckpoint) -> Result<InitComparison> {
    Ok(InitComparison {
        transfer: run_training(config, data, &Init::Transfer(mono.clone()))?,
        random: run_training(config, data, &Init::Random)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity;

    impl Reconstruct for Identity {
        fn reconstruct(&self, audio: &Tensor) -> Result<Tensor> {
            Ok(audio.clone())
        }
    }

    struct Halve;

    impl Reconstruct for Halve {
        fn reconstruct(&self, audio: &Tensor) -> Result<Tensor> {
            Ok(audio.scale(0.5))
        }
    }

    fn small_data() -> TrainingData {
        TrainingData::synthetic(2, 8, AmbisonicsOrder::new(1), 44_100, 600, 5).unwrap()
    }

    fn scales() -> Vec<SpectrogramConfig> {
        mel_scales_for_length(44_100.0, 600).into_iter().take(3).collect()
    }

    #[test]
    fn identity_validates_to_zero() {
        let d = small_data();
        let r = validate(&Identity, &d.heldout, &scales(), 0, 0.0).unwrap();
        assert_eq!(r.mel_val, 0.0);
        assert_eq!(r.cov_val, 0.0);
    }

    #[test]
    fn validation_is_the_mean_of_per_excerpt_losses() {
        let d = small_data();
        let s = scales();
        let r = validate(&Halve, &d.heldout, &s, 3, 1.0).unwrap();
        let per: Vec<f64> = d
            .heldout
            .iter()
            .map(|x| multiscale_mel_loss(x, &x.scale(0.5), &s).unwrap())
            .collect();
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        assert!((r.mel_val - mean).abs() < 1e-12);
        assert!(r.mel_val > 0.0);
        let again = validate(&Halve, &d.heldout, &s, 3, 2.0).unwrap();
        assert!(r.same_values(&again));
        assert!(validate(&Halve, &[], &s, 0, 0.0).is_err());
    }

    #[test]
    fn synthetic_split_is_seven_eighths() {
        let d = small_data();
        assert_eq!(d.train.len(), 14);
        assert_eq!(d.heldout.len(), 2);
        assert_eq!(d.n_channels(), 4);
        assert_eq!(d.mono().n_channels(), 1);
        assert_eq!(d.mono().train[3].row(0), d.train[3].row(0));
    }

    #[test]
    fn curve_csv_round_trips() {
        let recs = vec![
            ValidationRecord { step: 0, mel_val: 1.25, cov_val: 0.1 + 0.2, wall_time_s: 0.5 },
            ValidationRecord { step: 10, mel_val: 0.75, cov_val: 1e-17, wall_time_s: 2.0 },
        ];
        let text = curve_to_csv(&recs);
        assert!(text.starts_with("step,mel_val,cov_val,wall_time_s\n"));
        let back = curve_from_csv(&text).unwrap();
        assert_eq!(back, recs);
        assert!(curve_from_csv("step,mel\n").is_err());
        assert!(curve_from_csv(&format!("{CURVE_HEADER}\n5,1,1,0\n5,1,1,0\n")).is_err());
    }

    #[test]
    fn mismatched_excerpts_are_rejected() {
        let a = Tensor::zeros(&[2, 10]);
        let b = Tensor::zeros(&[2, 11]);
        assert!(TrainingData::new(44_100, vec![a.clone()], vec![b]).is_err());
        assert!(TrainingData::new(44_100, vec![a.clone()], vec![]).is_err());
        assert!(TrainingData::new(44_100, vec![], vec![a]).is_err());
    }
}

#[cfg(test)]
mod run_tests {
    use super::*;

    fn setup(steps: usize, interval: usize) -> (TrainConfig, TrainingData) {
        let d = TrainingData::synthetic(2, 8, AmbisonicsOrder::new(1), 44_100, 256, 2).unwrap();
        let mut c = TrainConfig {
            steps,
            validation_interval: interval,
            excerpt_seconds: 256.0 / 44_100.0,
            batch_size: 2,
            mel_max_window: 128,
            ..TrainConfig::default()
        };
        c.weights.adversarial = 0.0;
        c.weights.feature_matching = 0.0;
        (c, d)
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let (c, d) = setup(0, 5);
        let out = run_training(&c, &d, &Init::Random).unwrap();
        let init = init_state(&c, &d, &Init::Random).unwrap();
        assert_eq!(out.generator.tensors, init.gen_params);
        assert_eq!(out.curve.len(), 1);
        assert!(out.last_step.is_none());
        assert_eq!(out.generator.config_text, c.to_text());
    }

    #[test]
    fn curve_has_one_record_per_interval_plus_one() {
        let (c, d) = setup(7, 3);
        let out = run_training(&c, &d, &Init::Random).unwrap();
        let steps: Vec<usize> = out.curve.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 3, 6]);
        let parsed = curve_from_csv(&curve_to_csv(&out.curve)).unwrap();
        assert!(parsed.iter().zip(&out.curve).all(|(a, b)| a.same_values(b)));
    }

    #[test]
    fn transfer_starts_from_replicated_mono_weights() {
        let (c, d) = setup(2, 1);
        let mono = pretrain_mono(&c, &d).unwrap();
        assert_eq!(mono.generator.generator_config().unwrap().io_channels, 1);
        let cmp = compare_inits(&c, &d, &mono.generator).unwrap();
        let grid = |o: &TrainingOutcome| o.curve.iter().map(|r| r.step).collect::<Vec<_>>();
        assert_eq!(grid(&cmp.transfer), grid(&cmp.random));
        let init = init_state(&c, &d, &Init::Transfer(mono.generator.clone())).unwrap();
        let expected = transfer_from_mono(&mono.generator, 4).unwrap();
        assert_eq!(init.gen_params, expected.tensors);
        assert_ne!(cmp.transfer.generator.tensors, cmp.random.generator.tensors);
    }

    #[test]
    fn transfer_requires_a_matching_architecture() {
        let (c, d) = setup(0, 1);
        let mono = pretrain_mono(&c, &d).unwrap();
        let mut other = c.clone();
        other.model = ModelSize::Default;
        assert!(init_state(&other, &d, &Init::Transfer(mono.generator)).is_err());
    }

    #[test]
    fn data_sample_rate_must_match() {
        let (mut c, d) = setup(0, 1);
        c.sample_rate = 48_000;
        assert!(run_training(&c, &d, &Init::Random).is_err());
    }
}
