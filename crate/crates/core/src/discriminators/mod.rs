//! Multi-period, multi-scale and multi-resolution spectrogram
//! discriminators applied to each audio channel.
//!
//! Every channel is scored separately. With shared weights the channels are
//! folded into the batch axis and one network sees all of them; otherwise
//! each channel has its own copy of every sub-discriminator and produces its
//! own output record. Either way the losses average over channels.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, ParamSet, Var};
use crate::losses::DiscValues;
use crate::model::checkpoint::{CheckpointError, ModelCheckpoint, Words, KIND_DISCRIMINATOR};
use crate::model::ConvGeometry;
use crate::tensor::Tensor;

const SLOPE: f64 = 0.1;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscriminatorSuiteConfig {
    pub io_channels: usize,
    pub mpd_periods: Vec<usize>,
    pub msd_scales: Vec<usize>,
    /// STFT window lengths; hop is a quarter window.
    pub mrsd_windows: Vec<usize>,
    /// Width of the first hidden layer.
    pub hidden: usize,
    pub shared_weights: bool,
}

impl Default for DiscriminatorSuiteConfig {
    fn default() -> Self {
        Self {
            io_channels: 16,
            mpd_periods: vec![2, 3, 5],
            msd_scales: vec![1, 2],
            mrsd_windows: vec![512, 1024],
            hidden: 16,
            shared_weights: true,
        }
    }
}

impl DiscriminatorSuiteConfig {
    /// Small suite for short excerpts.
    pub fn tiny(io_channels: usize) -> Self {
        Self {
            io_channels,
            mpd_periods: vec![2, 3, 5],
            msd_scales: vec![1, 2],
            mrsd_windows: vec![128, 256],
            hidden: 4,
            shared_weights: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("discriminators: {m}")));
        if self.io_channels == 0 || self.hidden == 0 {
            return bad("io_channels and hidden must be ≥ 1".into());
        }
        if self.mpd_periods.is_empty() && self.msd_scales.is_empty() && self.mrsd_windows.is_empty() {
            return bad("at least one sub-discriminator is required".into());
        }
        for (i, &p) in self.mpd_periods.iter().enumerate() {
            if p < 2 || self.mpd_periods[..i].contains(&p) {
                return bad(format!("periods must be distinct and ≥ 2, got {:?}", self.mpd_periods));
            }
        }
        if let Some(s) = self.msd_scales.iter().find(|s| !s.is_power_of_two()) {
            return bad(format!("scale {s} is not a power of two"));
        }
        if let Some(w) = self.mrsd_windows.iter().find(|w| !w.is_power_of_two() || **w < 4) {
            return bad(format!("window {w} is not a power of two ≥ 4"));
        }
        Ok(())
    }

    /// Shortest input every sub-discriminator accepts.
    pub fn min_length(&self) -> usize {
        let p = self.mpd_periods.iter().copied().max().unwrap_or(1);
        let s = self.msd_scales.iter().copied().max().unwrap_or(1);
        let w = self.mrsd_windows.iter().map(|w| w / 2 + 1).max().unwrap_or(1);
        p.max(s).max(w)
    }

    fn words(&self) -> Vec<u32> {
        let mut w = vec![
            KIND_DISCRIMINATOR,
            self.io_channels as u32,
            self.hidden as u32,
            u32::from(self.shared_weights),
        ];
        for list in [&self.mpd_periods, &self.msd_scales, &self.mrsd_windows] {
            w.push(list.len() as u32);
            w.extend(list.iter().map(|&v| v as u32));
        }
        w
    }

    fn from_words(words: &[u32]) -> Result<Self, CheckpointError> {
        let mut w = Words::new(words);
        let cfg = Self {
            io_channels: w.next()?,
            hidden: w.next()?,
            shared_weights: w.next()? != 0,
            mpd_periods: w.list()?,
            msd_scales: w.list()?,
            mrsd_windows: w.list()?,
        };
        w.finish()?;
        cfg.validate().map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
        Ok(cfg)
    }
}

/// Outputs of one sub-discriminator recorded in a graph.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub name: String,
    pub logits: Var,
    /// Every hidden activation, input side first.
    pub features: Vec<Var>,
}

impl DiscOutput {
    pub fn values(&self, g: &Graph) -> DiscValues {
        DiscValues {
            logits: g.value(self.logits).clone(),
            features: self.features.iter().map(|&f| g.value(f).clone()).collect(),
        }
    }
}

struct LayerSpec {
    c_out: usize,
    kernel: usize,
    stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Period(usize),
    Scale(usize),
    Spectrogram(usize),
}

impl Kind {
    fn name(self) -> String {
        match self {
            Kind::Period(p) => format!("mpd.p{p}"),
            Kind::Scale(s) => format!("msd.s{s}"),
            Kind::Spectrogram(w) => format!("mrsd.w{w}"),
        }
    }

    fn input_channels(self) -> usize {
        match self {
            Kind::Spectrogram(w) => w / 2 + 1,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscriminatorSuite {
    config: DiscriminatorSuiteConfig,
}

impl DiscriminatorSuite {
    pub fn new(config: DiscriminatorSuiteConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &DiscriminatorSuiteConfig {
        &self.config
    }

    fn kinds(&self) -> Vec<Kind> {
        let c = &self.config;
        c.mpd_periods
            .iter()
            .map(|&p| Kind::Period(p))
            .chain(c.msd_scales.iter().map(|&s| Kind::Scale(s)))
            .chain(c.mrsd_windows.iter().map(|&w| Kind::Spectrogram(w)))
            .collect()
    }

    fn layers(&self, kind: Kind) -> Vec<LayerSpec> {
        let h = self.config.hidden;
        let l = |c_out, kernel, stride| LayerSpec { c_out, kernel, stride };
        match kind {
            Kind::Period(_) => vec![l(h, 5, 3), l(2 * h, 5, 3), l(2 * h, 5, 1), l(1, 3, 1)],
            Kind::Scale(_) => vec![l(h, 15, 1), l(2 * h, 9, 4), l(2 * h, 9, 4), l(1, 3, 1)],
            Kind::Spectrogram(_) => vec![l(h, 3, 1), l(h, 3, 2), l(1, 3, 1)],
        }
    }

    /// Parameter prefixes, one per independent network.
    fn prefixes(&self, kind: Kind) -> Vec<String> {
        if self.config.shared_weights {
            vec![kind.name()]
        } else {
            (0..self.config.io_channels).map(|c| format!("{}.ch{c}", kind.name())).collect()
        }
    }

    /// Normal(0, 0.02) kernels and zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut p = ParamSet::new();
        for kind in self.kinds() {
            for prefix in self.prefixes(kind) {
                let mut c_in = kind.input_channels();
                for (i, spec) in self.layers(kind).iter().enumerate() {
                    let name = format!("{prefix}.conv{i}");
                    p.insert(format!("{name}.weight"), Tensor::randn(&[spec.c_out, c_in, spec.kernel], INIT_STD, rng));
                    p.insert(format!("{name}.bias"), Tensor::zeros(&[spec.c_out]));
                    c_in = spec.c_out;
                }
            }
        }
        p
    }

    pub fn init_params_seeded(&self, seed: u64) -> ParamSet {
        self.init_params(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Scores `[N × C × L]` audio.
    pub fn discriminate(&self, g: &mut Graph, b: &Bound, audio: Var) -> Result<Vec<DiscOutput>> {
        let shape = g.shape(audio).to_vec();
        if shape.len() != 3 || shape[1] != self.config.io_channels {
            return Err(Error::Shape(format!(
                "discriminators expect [N × {} × L], got {shape:?}",
                self.config.io_channels
            )));
        }
        if shape[2] < self.config.min_length() {
            return Err(Error::Shape(format!(
                "discriminators need at least {} samples, got {}",
                self.config.min_length(),
                shape[2]
            )));
        }
        let (n, c, len) = (shape[0], shape[1], shape[2]);
        let mut out = Vec::new();
        for kind in self.kinds() {
            if self.config.shared_weights {
                let x = g.reshape(audio, vec![n * c, 1, len]);
                out.push(self.run(g, b, kind, &kind.name(), x)?);
            } else {
                for ch in 0..c {
                    let idx: Vec<usize> = (0..n).flat_map(|i| (0..len).map(move |t| (i * c + ch) * len + t)).collect();
                    let x = g.gather(audio, Arc::new(idx), vec![n, 1, len]);
                    let prefix = format!("{}.ch{ch}", kind.name());
                    out.push(self.run(g, b, kind, &prefix, x)?);
                }
            }
        }
        Ok(out)
    }

    /// One sub-discriminator on `[B × 1 × L]`.
    fn run(&self, g: &mut Graph, b: &Bound, kind: Kind, prefix: &str, x: Var) -> Result<DiscOutput> {
        let mut h = match kind {
            Kind::Period(p) => fold_period(g, x, p),
            Kind::Scale(s) if s > 1 => g.avg_pool1d(x, s),
            Kind::Scale(_) => x,
            Kind::Spectrogram(w) => {
                let spec = g.stft_magnitude(x, w, w / 4)?;
                let s = g.shape(spec).to_vec();
                g.reshape(spec, vec![s[0], s[2], s[3]])
            }
        };
        let layers = self.layers(kind);
        let mut features = Vec::with_capacity(layers.len() - 1);
        for (i, spec) in layers.iter().enumerate() {
            let name = format!("{prefix}.conv{i}");
            let geo = ConvGeometry {
                stride: spec.stride,
                dilation: 1,
                padding: spec.kernel / 2,
            };
            h = g.conv1d(h, b.get(&format!("{name}.weight")), Some(b.get(&format!("{name}.bias"))), geo);
            if i + 1 < layers.len() {
                h = g.leaky_relu(h, SLOPE);
                features.push(h);
            }
        }
        Ok(DiscOutput {
            name: prefix.to_string(),
            logits: h,
            features,
        })
    }

    /// Concrete outputs for `[N × C × L]` audio.
    pub fn discriminate_values(&self, params: &ParamSet, audio: &Tensor) -> Result<Vec<DiscValues>> {
        let mut g = Graph::new();
        let b = g.bind(params, false);
        let x = g.constant(audio.clone());
        Ok(self.discriminate(&mut g, &b, x)?.iter().map(|o| o.values(&g)).collect())
    }

    pub fn checkpoint(&self, params: ParamSet, config_text: impl Into<String>) -> ModelCheckpoint {
        ModelCheckpoint {
            config_words: self.config.words(),
            config_text: config_text.into(),
            tensors: params,
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<(Self, ParamSet)> {
        if ck.kind() != KIND_DISCRIMINATOR {
            return Err(CheckpointError::WrongKind {
                expected: "discriminator",
                found: crate::model::checkpoint::kind_name(ck.kind()),
            }
            .into());
        }
        let suite = Self::new(DiscriminatorSuiteConfig::from_words(&ck.config_words[1..])?)?;
        Ok((suite, ck.tensors.clone()))
    }
}

/// Frame layout after folding by period `p`: `[B·p × 1 × L/p]`, where row
/// `b·p + j` holds samples `j, j+p, j+2p, …` of row `b`. Trailing samples
/// that do not fill a period are dropped.
pub fn fold_indices(batch: usize, len: usize, p: usize) -> (Vec<usize>, Vec<usize>) {
    let t = len / p;
    let idx = (0..batch)
        .flat_map(|b| (0..p).flat_map(move |j| (0..t).map(move |k| b * len + k * p + j)))
        .collect();
    (idx, vec![batch * p, 1, t])
}

fn fold_period(g: &mut Graph, x: Var, p: usize) -> Var {
    let s = g.shape(x).to_vec();
    let (idx, shape) = fold_indices(s[0], s[2], p);
    g.gather(x, Arc::new(idx), shape)
}

pub fn build_discriminator_suite(config: DiscriminatorSuiteConfig) -> Result<DiscriminatorSuite> {
    DiscriminatorSuite::new(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let s = DiscriminatorSuite::new(DiscriminatorSuiteConfig::tiny(16)).unwrap();
        assert_eq!(s.init_params_seeded(4), s.init_params_seeded(4));
        assert_ne!(s.init_params_seeded(4), s.init_params_seeded(5));
    }

    #[test]
    fn zero_audio_gives_zero_logits() {
        let s = DiscriminatorSuite::new(DiscriminatorSuiteConfig::tiny(2)).unwrap();
        let out = s.discriminate_values(&s.init_params_seeded(0), &Tensor::zeros(&[1, 2, 300])).unwrap();
        assert_eq!(out.len(), 7);
        assert!(out.iter().all(|o| o.logits.max_abs() == 0.0));
        assert!(out.iter().all(|o| !o.features.is_empty()));
    }

    #[test]
    fn fold_round_trips_truncated_input() {
        let (idx, shape) = fold_indices(2, 11, 3);
        assert_eq!(shape, vec![6, 1, 3]);
        let mut back = [usize::MAX; 22];
        for (pos, &src) in idx.iter().enumerate() {
            let (row, k) = (pos / 3, pos % 3);
            let (b, j) = (row / 3, row % 3);
            back[b * 11 + k * 3 + j] = src;
        }
        for b in 0..2 {
            for t in 0..9 {
                assert_eq!(back[b * 11 + t], b * 11 + t);
            }
        }
    }

    #[test]
    fn independent_weights_give_one_record_per_channel() {
        let cfg = DiscriminatorSuiteConfig {
            shared_weights: false,
            ..DiscriminatorSuiteConfig::tiny(3)
        };
        let s = DiscriminatorSuite::new(cfg).unwrap();
        let x = Tensor::randn(&[2, 3, 300], 0.1, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(s.discriminate_values(&s.init_params_seeded(0), &x).unwrap().len(), 21);
    }

    #[test]
    fn invalid_configs() {
        let base = DiscriminatorSuiteConfig::tiny(1);
        assert!(DiscriminatorSuite::new(DiscriminatorSuiteConfig { mpd_periods: vec![2, 2], ..base.clone() }).is_err());
        assert!(DiscriminatorSuite::new(DiscriminatorSuiteConfig { mpd_periods: vec![1], ..base.clone() }).is_err());
        assert!(DiscriminatorSuite::new(DiscriminatorSuiteConfig { msd_scales: vec![3], ..base.clone() }).is_err());
        assert!(DiscriminatorSuite::new(DiscriminatorSuiteConfig { io_channels: 0, ..base }).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = DiscriminatorSuite::new(DiscriminatorSuiteConfig::default()).unwrap();
        let ck = s.checkpoint(s.init_params_seeded(1), "x = 1\n");
        let back = ModelCheckpoint::from_bytes(&ck.to_bytes()).unwrap();
        let (s2, p2) = DiscriminatorSuite::from_checkpoint(&back).unwrap();
        assert_eq!(s2, s);
        assert_eq!(p2, ck.tensors);
    }

    #[test]
    fn short_input_is_rejected() {
        let s = DiscriminatorSuite::new(DiscriminatorSuiteConfig::tiny(1)).unwrap();
        assert!(s.discriminate_values(&s.init_params_seeded(0), &Tensor::zeros(&[1, 1, 100])).is_err());
    }
}
