//! `hoac`: data preparation, training, coding, evaluation and rendering for
//! the higher-order Ambisonics codec.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hoac_core::ambisonics::{render, truncate_order, AmbisonicsOrder, BFormatSignal, SpeakerLayout};
use hoac_core::audio_io::{read_wav, split_dataset, write_wav, DatasetManifest, MultichannelWave};
use hoac_core::codec::{self, bitrate_of, EncodedStream};
use hoac_core::dsp::fir::lowpass_anchor;
use hoac_core::dsp::mel_scales_for_length;
use hoac_core::gradcheck::suite::{run_suite, SuiteOptions};
use hoac_core::losses::{covariance_loss, multiscale_mel_loss};
use hoac_core::trainer::scenes::write_synthetic_scenes;
use hoac_core::trainer::{compare_inits, run_training, write_curve, Init, TrainingOutcome};
use hoac_core::{Error, ModelCheckpoint, Tensor, TrainConfig, TrainingData};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "hoac", version, about = "Neural codec for third-order Ambisonics")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Training configuration file (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides one config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Truncates B-format recordings to third order and writes a manifest
    /// with a 7/8 per-scene split.
    Prepare(PrepareArgs),
    /// Trains a generator and its discriminators.
    Train(TrainArgs),
    /// Trains twice from the same seed, from a transferred mono checkpoint
    /// and from random weights.
    CompareInits(CompareArgs),
    /// Encodes a B-format wav into a code stream.
    Encode(CodecArgs),
    /// Decodes a code stream into a B-format wav.
    Decode(CodecArgs),
    /// Objective metrics of a degraded file against its reference, as JSON.
    Eval(EvalArgs),
    /// Renders a B-format wav to a loudspeaker layout, one wav per speaker.
    Render(RenderArgs),
    /// Finite-difference checks of every differentiable building block.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Directory with one subdirectory of wavs per scene.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// Generates this many synthetic scenes instead of reading `--input`.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Recordings per synthetic scene.
    #[arg(long, default_value_t = 16)]
    per_scene: usize,
    /// Length of each synthetic recording in seconds.
    #[arg(long, default_value_t = 1.0)]
    seconds: f64,
    /// Target Ambisonics order.
    #[arg(long, default_value_t = 3)]
    order: usize,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset manifest written by `prepare`.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Initializes from this mono checkpoint instead of random weights.
    #[arg(long)]
    transfer_from: Option<PathBuf>,
    /// Trains a single-channel model on the omnidirectional channel.
    #[arg(long, conflicts_with = "transfer_from")]
    mono: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Mono checkpoint the transferred run starts from.
    #[arg(long)]
    mono_checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct CodecArgs {
    /// Input file.
    input: PathBuf,
    /// Generator checkpoint.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    reference: PathBuf,
    degraded: PathBuf,
    /// Also writes the 3.5 kHz low-pass anchor of the reference here.
    #[arg(long, value_name = "PATH")]
    lowpass_anchor: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    input: PathBuf,
    /// `7.1.4`, `cube8` or `stereo`.
    #[arg(long)]
    layout: String,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    /// Random instances per family.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Relative tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// An error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn classify(error: anyhow::Error) -> Failure {
    let code = match error.downcast_ref::<Error>() {
        Some(e) if e.is_numeric() => EXIT_NUMERIC,
        Some(Error::Config(_) | Error::UnknownLayout(_)) => EXIT_USAGE,
        _ if error.downcast_ref::<Usage>().is_some() => EXIT_USAGE,
        _ if error.downcast_ref::<GradientMismatch>().is_some() => EXIT_NUMERIC,
        _ => EXIT_DATA,
    };
    Failure { code, error }
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug)]
struct GradientMismatch(String);

impl std::fmt::Display for GradientMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "analytic and numeric gradients disagree for: {}", self.0)
    }
}

impl std::error::Error for GradientMismatch {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// The configuration after `--config`, `--set` and `--seed`.
fn resolve_config(c: &Common) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &c.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = c.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(c: &Common) -> anyhow::Result<&Path> {
    c.out.as_deref().ok_or_else(|| usage("--out is required"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let f = classify(e);
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(&cli.common)?;
    eprintln!("# seed = {}", cfg.seed);
    eprintln!("# resolved config:");
    for line in cfg.to_text().lines() {
        eprintln!("#   {line}");
    }
    let c = &cli.common;
    match &cli.command {
        Command::Prepare(a) => prepare(a, &cfg, out_path(c)?),
        Command::Train(a) => train(a, &cfg, out_path(c)?),
        Command::CompareInits(a) => compare(a, &cfg, out_path(c)?),
        Command::Encode(a) => encode(a, out_path(c)?),
        Command::Decode(a) => decode(a, out_path(c)?),
        Command::Eval(a) => eval(a),
        Command::Render(a) => render_cmd(a, out_path(c)?),
        Command::GradCheck(a) => grad_check(a, cfg.seed),
    }
}

/// Wavs in `dir`, sorted.
fn wavs_in(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    Ok(v)
}

fn prepare(a: &PrepareArgs, cfg: &TrainConfig, out: &Path) -> anyhow::Result<()> {
    let order = AmbisonicsOrder::new(a.order);
    fs::create_dir_all(out)?;
    let scenes: Vec<(String, Vec<PathBuf>)> = if let Some(n) = a.synthetic {
        write_synthetic_scenes(out, n, a.per_scene, order, cfg.sample_rate, a.seconds, cfg.seed)?
    } else {
        let input = a.input.as_ref().expect("clap requires --input");
        let mut dirs: Vec<PathBuf> = fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut scenes = Vec::new();
        for dir in dirs {
            let label = dir.file_name().unwrap().to_string_lossy().into_owned();
            let mut written = Vec::new();
            for src in wavs_in(&dir)? {
                let wave = read_wav(&src).with_context(|| format!("reading {}", src.display()))?;
                let b = BFormatSignal::from_wave(wave).with_context(|| format!("{}", src.display()))?;
                let t = truncate_order(&b, order).with_context(|| format!("{}", src.display()))?;
                let dst = out.join(&label).join(src.file_name().unwrap());
                fs::create_dir_all(dst.parent().unwrap())?;
                write_wav(&t.into_wave(), 16, &dst)?;
                written.push(dst);
            }
            if !written.is_empty() {
                scenes.push((label, written));
            }
        }
        scenes
    };
    // Paths relative to the manifest so the directory can be moved.
    let relative: Vec<(String, Vec<PathBuf>)> = scenes
        .into_iter()
        .map(|(s, files)| {
            let files = files
                .into_iter()
                .map(|p| p.strip_prefix(out).map(Path::to_path_buf).unwrap_or(p))
                .collect();
            (s, files)
        })
        .collect();
    let manifest = split_dataset(&relative, cfg.seed)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let path = out.join("manifest.tsv");
    manifest.save(&path)?;
    eprintln!(
        "wrote {} ({} train, {} held out)",
        path.display(),
        manifest.count(hoac_core::audio_io::Split::Train),
        manifest.count(hoac_core::audio_io::Split::Heldout)
    );
    Ok(())
}

fn load_data(a: &DataArgs, cfg: &TrainConfig) -> anyhow::Result<TrainingData> {
    let manifest = DatasetManifest::load(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    Ok(TrainingData::from_manifest(&manifest, cfg.excerpt_seconds, cfg.sample_rate)?)
}

fn save_outcome(o: &TrainingOutcome, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    o.generator.save(dir.join("generator.ckpt"))?;
    o.discriminator.save(dir.join("discriminator.ckpt"))?;
    write_curve(dir.join("curve.csv"), &o.curve)?;
    let last = o.curve.last().expect("curve has the step-0 record");
    eprintln!(
        "{}: step {} mel_val {:.5} cov_val {:.5}",
        dir.display(),
        last.step,
        last.mel_val,
        last.cov_val
    );
    Ok(())
}

fn train(a: &TrainArgs, cfg: &TrainConfig, out: &Path) -> anyhow::Result<()> {
    let mut data = load_data(&a.data, cfg)?;
    if a.mono {
        data = data.mono();
    }
    let init = match &a.transfer_from {
        Some(p) => Init::Transfer(ModelCheckpoint::load(p)?),
        None => Init::Random,
    };
    let outcome = run_training(cfg, &data, &init)?;
    save_outcome(&outcome, out)
}

fn compare(a: &CompareArgs, cfg: &TrainConfig, out: &Path) -> anyhow::Result<()> {
    let data = load_data(&a.data, cfg)?;
    let mono = ModelCheckpoint::load(&a.mono_checkpoint)?;
    let cmp = compare_inits(cfg, &data, &mono)?;
    save_outcome(&cmp.transfer, &out.join("transfer"))?;
    save_outcome(&cmp.random, &out.join("random"))
}

fn encode(a: &CodecArgs, out: &Path) -> anyhow::Result<()> {
    let ck = ModelCheckpoint::load(&a.model)?;
    let stream = codec::encode_file(&a.input, &ck, out)?;
    eprintln!("bitrate: {:.3} bit/s", bitrate_of(&stream.header));
    Ok(())
}

fn decode(a: &CodecArgs, out: &Path) -> anyhow::Result<()> {
    let ck = ModelCheckpoint::load(&a.model)?;
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let stream = EncodedStream::from_bytes(&bytes).map_err(Error::from)?;
    eprintln!("bitrate: {:.3} bit/s", bitrate_of(&stream.header));
    codec::decode_file(&a.input, &ck, out)?;
    Ok(())
}

/// `10·log10(Σ ref² / Σ (ref − deg)²)` per channel; `None` when identical.
fn snr_db(reference: &Tensor, degraded: &Tensor) -> Vec<Option<f64>> {
    (0..reference.dim(0))
        .map(|c| {
            let (r, d) = (reference.row(c), degraded.row(c));
            let signal: f64 = r.iter().map(|v| v * v).sum();
            let noise: f64 = r.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum();
            (noise > 0.0).then(|| 10.0 * (signal / noise).log10())
        })
        .collect()
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let reference = read_wav(&a.reference).with_context(|| format!("reading {}", a.reference.display()))?;
    let degraded = read_wav(&a.degraded).with_context(|| format!("reading {}", a.degraded.display()))?;
    if reference.samples.shape() != degraded.samples.shape() || reference.sample_rate != degraded.sample_rate {
        bail!(Error::Shape(format!(
            "reference {:?} at {} Hz vs degraded {:?} at {} Hz",
            reference.samples.shape(),
            reference.sample_rate,
            degraded.samples.shape(),
            degraded.sample_rate
        )));
    }
    let scales = mel_scales_for_length(reference.sample_rate as f64, reference.n_frames());
    if scales.is_empty() {
        bail!(Error::Shape(format!("{} samples is too short for the mel loss", reference.n_frames())));
    }
    let mel = multiscale_mel_loss(&reference.samples, &degraded.samples, &scales)?;
    let cov = if reference.n_channels() > 1 {
        Some(covariance_loss(&reference.samples, &degraded.samples)?)
    } else {
        None
    };
    if let Some(path) = &a.lowpass_anchor {
        write_wav(&lowpass_anchor(&reference), 16, path)?;
    }
    let report = json!({
        "mel": mel,
        "covariance": cov,
        "snr_db": snr_db(&reference.samples, &degraded.samples),
        "channels": reference.n_channels(),
        "frames": reference.n_frames(),
        "sample_rate": reference.sample_rate,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn render_cmd(a: &RenderArgs, out: &Path) -> anyhow::Result<()> {
    let layout = SpeakerLayout::named(&a.layout)?;
    let wave = read_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let sr = wave.sample_rate;
    let b = BFormatSignal::from_wave(wave)?;
    let feeds = render(&b, &layout)?;
    fs::create_dir_all(out)?;
    let peak = feeds.max_abs();
    if peak > 1.0 {
        eprintln!("warning: speaker feeds peak at {peak:.3} and will clip");
    }
    for s in 0..feeds.dim(0) {
        let mono = MultichannelWave::new(sr, Tensor::new(vec![1, feeds.dim(1)], feeds.row(s).to_vec())?)?;
        write_wav(&mono, 16, out.join(format!("speaker_{s:02}.wav")))?;
    }
    eprintln!("wrote {} speaker feeds to {}", feeds.dim(0), out.display());
    Ok(())
}

fn grad_check(a: &GradCheckArgs, seed: u64) -> anyhow::Result<()> {
    if a.instances == 0 || !(a.tolerance > 0.0) {
        return Err(usage("--instances must be ≥ 1 and --tolerance positive"));
    }
    let fams = run_suite(&SuiteOptions {
        instances: a.instances,
        tolerance: a.tolerance,
        seed,
        ..SuiteOptions::default()
    });
    let report: Vec<_> = fams
        .iter()
        .map(|f| {
            json!({
                "family": f.name,
                "instances": f.instances,
                "failed": f.failed,
                "probes": f.checked,
                "skipped_at_kinks": f.skipped,
                "max_rel_error": f.max_rel_error,
                "errors": f.errors,
                "passed": f.passed(),
            })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&report)?);
    let bad: Vec<&str> = fams.iter().filter(|f| !f.passed()).map(|f| f.name).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(GradientMismatch(bad.join(", ")).into())
    }
}
