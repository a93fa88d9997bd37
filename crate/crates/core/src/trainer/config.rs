//! Flat `key = value` training configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors. The text a config was parsed from is kept so checkpoints can
//! carry it verbatim.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::discriminators::DiscriminatorSuiteConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::GeneratorConfig;

/// Named model presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSize {
    Tiny,
    Default,
}

impl FromStr for ModelSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(ModelSize::Tiny),
            "default" => Ok(ModelSize::Default),
            other => Err(Error::Config(format!("unknown model size `{other}` (tiny | default)"))),
        }
    }
}

impl ModelSize {
    fn as_str(self) -> &'static str {
        match self {
            ModelSize::Tiny => "tiny",
            ModelSize::Default => "default",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub excerpt_seconds: f64,
    pub sample_rate: u32,
    pub model: ModelSize,
    pub discriminators: ModelSize,
    pub shared_disc_weights: bool,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay per step.
    pub lr_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub covariance_loss_start_step: usize,
    pub validation_interval: usize,
    /// Largest mel window used by the reconstruction loss.
    pub mel_max_window: usize,
    pub weights: LossWeights,
    pub(crate) source: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            excerpt_seconds: 0.5,
            sample_rate: 44_100,
            model: ModelSize::Tiny,
            discriminators: ModelSize::Tiny,
            shared_disc_weights: true,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            beta1: 0.8,
            beta2: 0.99,
            weight_decay: 0.01,
            lr_decay: 0.999996,
            grad_clip: 1000.0,
            seed: 0,
            covariance_loss_start_step: 0,
            validation_interval: 100,
            mel_max_window: 2048,
            weights: LossWeights::default(),
            source: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "steps",
    "batch_size",
    "excerpt_seconds",
    "sample_rate",
    "model",
    "discriminators",
    "shared_disc_weights",
    "lr_generator",
    "lr_discriminator",
    "beta1",
    "beta2",
    "weight_decay",
    "lr_decay",
    "grad_clip",
    "seed",
    "covariance_loss_start_step",
    "validation_interval",
    "mel_max_window",
    "weight_mel",
    "weight_feature_matching",
    "weight_adversarial",
    "weight_codebook",
    "weight_commitment",
    "weight_covariance",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", n + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.source = Some(text.to_string());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key. Command-line overrides go through here too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.weights;
        match key {
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "excerpt_seconds" => self.excerpt_seconds = parse(key, value)?,
            "sample_rate" => self.sample_rate = parse(key, value)?,
            "model" => self.model = value.parse()?,
            "discriminators" => self.discriminators = value.parse()?,
            "shared_disc_weights" => self.shared_disc_weights = parse(key, value)?,
            "lr_generator" => self.lr_generator = parse(key, value)?,
            "lr_discriminator" => self.lr_discriminator = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "covariance_loss_start_step" => self.covariance_loss_start_step = parse(key, value)?,
            "validation_interval" => self.validation_interval = parse(key, value)?,
            "mel_max_window" => self.mel_max_window = parse(key, value)?,
            "weight_mel" => w.mel = parse(key, value)?,
            "weight_feature_matching" => w.feature_matching = parse(key, value)?,
            "weight_adversarial" => w.adversarial = parse(key, value)?,
            "weight_codebook" => w.codebook = parse(key, value)?,
            "weight_commitment" => w.commitment = parse(key, value)?,
            "weight_covariance" => w.covariance = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        self.source = None;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if !(self.excerpt_seconds > 0.0) || !self.excerpt_seconds.is_finite() {
            return bad("excerpt_seconds must be positive");
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.validation_interval == 0 {
            return bad("validation_interval must be ≥ 1");
        }
        for (name, v) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
            ("weight_decay", self.weight_decay),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !self.mel_max_window.is_power_of_two() || self.mel_max_window < 32 {
            return bad("mel_max_window must be a power of two ≥ 32");
        }
        self.weights.validate()
    }

    /// Samples per excerpt.
    pub fn excerpt_frames(&self) -> usize {
        (self.excerpt_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn generator_config(&self, io_channels: usize) -> GeneratorConfig {
        let mut g = match self.model {
            ModelSize::Tiny => GeneratorConfig::tiny(io_channels),
            ModelSize::Default => GeneratorConfig {
                io_channels,
                ..GeneratorConfig::default()
            },
        };
        g.sample_rate = self.sample_rate;
        g
    }

    pub fn discriminator_config(&self, io_channels: usize) -> DiscriminatorSuiteConfig {
        let mut d = match self.discriminators {
            ModelSize::Tiny => DiscriminatorSuiteConfig::tiny(io_channels),
            ModelSize::Default => DiscriminatorSuiteConfig {
                io_channels,
                ..DiscriminatorSuiteConfig::default()
            },
        };
        d.shared_weights = self.shared_disc_weights;
        d
    }

    /// The parsed source text, or a canonical rendering of every key.
    pub fn to_text(&self) -> String {
        if let Some(s) = &self.source {
            return s.clone();
        }
        let w = &self.weights;
        let mut out = String::new();
        let pairs: [(&str, String); 24] = [
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("excerpt_seconds", self.excerpt_seconds.to_string()),
            ("sample_rate", self.sample_rate.to_string()),
            ("model", self.model.as_str().into()),
            ("discriminators", self.discriminators.as_str().into()),
            ("shared_disc_weights", self.shared_disc_weights.to_string()),
            ("lr_generator", self.lr_generator.to_string()),
            ("lr_discriminator", self.lr_discriminator.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("seed", self.seed.to_string()),
            ("covariance_loss_start_step", self.covariance_loss_start_step.to_string()),
            ("validation_interval", self.validation_interval.to_string()),
            ("mel_max_window", self.mel_max_window.to_string()),
            ("weight_mel", w.mel.to_string()),
            ("weight_feature_matching", w.feature_matching.to_string()),
            ("weight_adversarial", w.adversarial.to_string()),
            ("weight_codebook", w.codebook.to_string()),
            ("weight_commitment", w.commitment.to_string()),
            ("weight_covariance", w.covariance.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = TrainConfig::default();
        c.set("seed", "17").unwrap();
        c.set("weight_covariance", "0.5").unwrap();
        c.set("model", "default").unwrap();
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back.seed, 17);
        assert_eq!(back.weights.covariance, 0.5);
        assert_eq!(back.model, ModelSize::Default);
        assert_eq!(TrainConfig { source: None, ..back }, c);
    }

    #[test]
    fn every_key_is_rendered() {
        let text = TrainConfig::default().to_text();
        for k in KEYS {
            assert!(text.lines().any(|l| l.starts_with(&format!("{k} ="))), "{k}");
        }
    }

    #[test]
    fn source_text_is_kept_verbatim() {
        let text = "# desk run\nsteps = 10\n\nbatch_size=2  # small\n";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.steps, 10);
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.to_text(), text);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("stepz = 3").is_err());
        assert!(TrainConfig::parse("steps = 3\nsteps = 4").is_err());
        assert!(TrainConfig::parse("steps").is_err());
        assert!(TrainConfig::parse("steps = -1").is_err());
        assert!(TrainConfig::parse("batch_size = 0").is_err());
        assert!(TrainConfig::parse("beta2 = 1.0").is_err());
        assert!(TrainConfig::parse("weight_mel = -2").is_err());
        assert!(TrainConfig::parse("model = huge").is_err());
    }

    #[test]
    fn excerpt_frames_rounds() {
        let c = TrainConfig { excerpt_seconds: 5.0, ..Default::default() };
        assert_eq!(c.excerpt_frames(), 220_500);
    }
}
