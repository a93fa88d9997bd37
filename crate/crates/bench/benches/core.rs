use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hoac_core::codec::encode;
use hoac_core::dsp::mel_spectrogram;
use hoac_core::losses::covariance::covariance_loss;
use hoac_core::model::conv::{ConvGeometry, Conv1dLayer};
use hoac_core::trainer::init_state;
use hoac_core::trainer::Init;
use hoac_core::{
    AmbisonicsOrder, GeneratorModel, ModelCheckpoint, MultichannelWave, SpectrogramConfig, Tensor, TrainConfig,
    TrainingData,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SR: u32 = 44_100;

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = Conv1dLayer::new(
        Tensor::randn(&[32, 16, 7], 0.1, &mut rng),
        Tensor::zeros(&[32]),
        ConvGeometry { stride: 1, dilation: 1, padding: 3 },
    )
    .unwrap();
    let x = Tensor::randn(&[16, 4096], 1.0, &mut rng);
    c.bench_function("conv1d 16->32 k7 x4096", |b| b.iter(|| layer.forward(black_box(&x)).unwrap()));
}

fn spectral(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(&[16, SR as usize], 0.3, &mut rng);
    let cfg = SpectrogramConfig::new(2048, 512, SR as f64);
    c.bench_function("mel 2048/512, 1 s", |b| b.iter(|| mel_spectrogram(black_box(x.row(0)), &cfg).unwrap()));
    let y = Tensor::randn(&[16, SR as usize], 0.3, &mut rng);
    c.bench_function("covariance loss 16 ch, 1 s", |b| b.iter(|| covariance_loss(black_box(&x), &y).unwrap()));
}

fn training(c: &mut Criterion) {
    let data = TrainingData::synthetic(1, 8, AmbisonicsOrder::new(3), SR, 256, 0).unwrap();
    let mut cfg = TrainConfig::default();
    for (k, v) in [("excerpt_seconds", (256.0 / SR as f64).to_string()), ("mel_max_window", "256".into())] {
        cfg.set(k, &v).unwrap();
    }
    let batch = Tensor::stack(&data.train[..4]).unwrap();
    let mut group = c.benchmark_group("train step, 4 × 16 ch × 256");
    group.sample_size(10);
    for (name, adv) in [("reconstruction only", "0"), ("with discriminators", "1")] {
        let mut cfg = cfg.clone();
        cfg.set("weight_adversarial", adv).unwrap();
        cfg.set("weight_feature_matching", adv).unwrap();
        group.bench_function(name, |b| {
            b.iter_batched(
                || init_state(&cfg, &data, &Init::Random).unwrap(),
                |mut state| state.train_step(&batch).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn codec(c: &mut Criterion) {
    let cfg = TrainConfig::default().generator_config(16);
    let model = GeneratorModel::new(cfg.clone()).unwrap();
    let params = model.init_params(&mut ChaCha8Rng::seed_from_u64(2));
    let ckpt = ModelCheckpoint::generator(&cfg, params, "");
    let wave = MultichannelWave::new(SR, Tensor::randn(&[16, SR as usize / 4], 0.1, &mut ChaCha8Rng::seed_from_u64(3))).unwrap();
    let mut group = c.benchmark_group("codec");
    group.sample_size(10);
    group.bench_function("encode 16 ch, 0.25 s", |b| b.iter(|| encode(black_box(&wave), &ckpt).unwrap()));
    group.finish();
}

criterion_group!(benches, conv, spectral, training, codec);
criterion_main!(benches);
