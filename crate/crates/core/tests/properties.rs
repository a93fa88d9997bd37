use std::path::PathBuf;

use hoac_core::ambisonics::{channel_count, render, truncate_order};
use hoac_core::audio_io::manifest::{split_dataset, Split};
use hoac_core::audio_io::wav::{encode_wav, parse_wav, quantize};
use hoac_core::codec::bitpack::{pack, unpack};
use hoac_core::codec::{BitstreamHeader, EncodedStream, HEADER_LEN};
use hoac_core::losses::covariance::covariance_loss;
use hoac_core::model::Codes;
use hoac_core::{AmbisonicsOrder, BFormatSignal, DatasetManifest, MultichannelWave, SpeakerLayout, Tensor, TrainConfig};
use proptest::prelude::*;

fn tensor(channels: usize, frames: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f64..1.0, channels * frames)
        .prop_map(move |d| Tensor::new(vec![channels, frames], d).unwrap())
}

fn header(n_codebooks: u16, bits: u32, n_frames: u64) -> BitstreamHeader {
    BitstreamHeader {
        version: 1,
        sample_rate: 44_100,
        n_channels: 16,
        ambisonics_order: 3,
        total_stride: 64,
        n_codebooks,
        codebook_size: 1 << bits,
        n_frames,
        model_digest: [7; 32],
        n_original_frames: n_frames * 64,
    }
}

proptest! {
    #[test]
    fn bitpack_round_trips(bits in 1u32..=32, raw in prop::collection::vec(any::<u32>(), 0..64)) {
        let mask = if bits == 32 { u32::MAX } else { (1 << bits) - 1 };
        let values: Vec<u32> = raw.iter().map(|v| v & mask).collect();
        let bytes = pack(&values, bits);
        prop_assert_eq!(bytes.len(), (values.len() * bits as usize).div_ceil(8));
        prop_assert_eq!(unpack(&bytes, values.len(), bits), Some(values));
    }

    #[test]
    fn stream_round_trips(n_cb in 1u16..6, bits in 1u32..12, frames in 0u64..40, seed in any::<u64>()) {
        let h = header(n_cb, bits, frames);
        let n = n_cb as usize * frames as usize;
        let indices = (0..n as u64).map(|i| (seed.wrapping_mul(i + 1) >> 7) as u32 & ((1 << bits) - 1)).collect();
        let s = EncodedStream { header: h, codes: Codes { n_codebooks: n_cb as usize, frames: frames as usize, indices } };
        let bytes = s.to_bytes();
        prop_assert_eq!(bytes.len(), HEADER_LEN + (n * bits as usize).div_ceil(8));
        prop_assert_eq!(EncodedStream::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn stream_decoding_is_total(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = EncodedStream::from_bytes(&bytes);
        let mut with_magic = b"AMBS".to_vec();
        with_magic.extend_from_slice(&bytes);
        let _ = EncodedStream::from_bytes(&with_magic);
    }

    #[test]
    fn corrupted_streams_never_panic(flip in 0usize..2000, bit in 0u8..8, cut in 0usize..2000) {
        let h = header(3, 10, 20);
        let s = EncodedStream { header: h, codes: Codes { n_codebooks: 3, frames: 20, indices: (0..60).collect() } };
        let mut bytes = s.to_bytes();
        let i = flip % bytes.len();
        bytes[i] ^= 1 << bit;
        let _ = EncodedStream::from_bytes(&bytes);
        bytes.truncate(cut % (bytes.len() + 1));
        let _ = EncodedStream::from_bytes(&bytes);
    }

    #[test]
    fn wav_round_trip_is_within_one_step(depth in prop::sample::select(vec![16u16, 24]), channels in 1usize..5, x in tensor(4, 50)) {
        let rows: Vec<Vec<f64>> = (0..channels).map(|c| x.row(c).to_vec()).collect();
        let w = MultichannelWave::new(48_000, Tensor::from_rows(&rows).unwrap()).unwrap();
        let back = parse_wav(&encode_wav(&w, depth).unwrap()).unwrap();
        prop_assert_eq!(back.sample_rate, 48_000);
        prop_assert_eq!(back.samples.shape(), w.samples.shape());
        let step = 1.0 / (1u64 << (depth - 1)) as f64;
        for (a, b) in w.samples.data().iter().zip(back.samples.data()) {
            prop_assert!((a - b).abs() <= step);
        }
        // Quantized samples survive a second pass unchanged.
        let again = parse_wav(&encode_wav(&back, depth).unwrap()).unwrap();
        prop_assert_eq!(again, back);
    }

    #[test]
    fn quantize_is_monotone(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo, 16) <= quantize(hi, 16));
    }

    #[test]
    fn wav_parsing_is_total(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = parse_wav(&bytes);
        let mut riff = b"RIFF\x40\x00\x00\x00WAVEfmt ".to_vec();
        riff.extend_from_slice(&bytes);
        let _ = parse_wav(&riff);
    }

    #[test]
    fn covariance_loss_invariants(x in tensor(4, 64), y in tensor(4, 64), gain in 0.5f64..10.0) {
        // Near-silent channels are dominated by the stabilizing epsilon.
        let audible = |t: &Tensor| (0..4).all(|c| t.row(c).iter().map(|v| v * v).sum::<f64>() > 1e-2);
        prop_assume!(audible(&x) && audible(&y));
        let l = covariance_loss(&x, &y).unwrap();
        prop_assert!((0.0..=12.0 + 1e-9).contains(&l));
        prop_assert!(covariance_loss(&x, &x).unwrap().abs() < 1e-9);
        prop_assert!((l - covariance_loss(&y, &x).unwrap()).abs() < 1e-12);
        // Invariant to an overall gain on either side.
        prop_assert!((l - covariance_loss(&x, &y.scale(gain)).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn manifest_partitions_every_scene(sizes in prop::collection::vec(1usize..30, 1..6), seed in any::<u64>()) {
        let scenes: Vec<(String, Vec<PathBuf>)> = sizes
            .iter()
            .enumerate()
            .map(|(s, &n)| (format!("s{s}"), (0..n).map(|i| PathBuf::from(format!("s{s}/{i}.wav"))).collect()))
            .collect();
        let m = split_dataset(&scenes, seed).unwrap();
        for (label, files) in &scenes {
            let of = |sp| m.entries.iter().filter(|e| &e.scene == label && e.split == sp).count();
            prop_assert_eq!(of(Split::Train), files.len() * 7 / 8);
            prop_assert_eq!(of(Split::Train) + of(Split::Heldout), files.len());
        }
        let mut all: Vec<_> = m.entries.iter().map(|e| e.path.clone()).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), sizes.iter().sum::<usize>());
        prop_assert_eq!(DatasetManifest::from_text(&m.to_text()).unwrap().entries, m.entries);
    }

    #[test]
    fn truncation_keeps_leading_channels(order in 0usize..4, x in tensor(25, 8)) {
        let b = BFormatSignal::new(AmbisonicsOrder::new(4), 44_100, x.clone()).unwrap();
        let t = truncate_order(&b, AmbisonicsOrder::new(order)).unwrap();
        let n = channel_count(AmbisonicsOrder::new(order));
        prop_assert_eq!(t.n_channels(), n);
        prop_assert_eq!(t.samples().data(), &x.data()[..n * 8]);
    }

    #[test]
    fn rendering_is_linear(x in tensor(16, 10), y in tensor(16, 10), a in -2.0f64..2.0) {
        let layout = SpeakerLayout::named("7.1.4").unwrap();
        let order = AmbisonicsOrder::new(3);
        let r = |t: &Tensor| render(&BFormatSignal::new(order, 44_100, t.clone()).unwrap(), &layout).unwrap();
        let combo = x.zip_map(&y, |p, q| a * p + q);
        let expected = r(&x).zip_map(&r(&y), |p, q| a * p + q);
        let got = r(&combo);
        for (p, q) in got.data().iter().zip(expected.data()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn config_text_round_trips(lr in 1e-6f64..1e-2, steps in 0usize..100_000, w in 0.0f64..10.0) {
        let mut c = TrainConfig::default();
        c.set("lr_generator", &lr.to_string()).unwrap();
        c.set("steps", &steps.to_string()).unwrap();
        c.set("weight_covariance", &w.to_string()).unwrap();
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), c.to_text());
        prop_assert_eq!((back.lr_generator, back.steps, back.weights.covariance), (lr, steps, w));
    }
}
