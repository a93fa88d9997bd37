//! Mono-to-multichannel weight transfer.
//!
//! The multichannel model is initialized from a single-channel checkpoint by
//! replicating the mono kernel slice across every input channel of the first
//! convolution and every output row of the last convolution. All interior
//! tensors, including the codebooks, are copied as they are. At the start of
//! fine-tuning all channels are therefore processed by identical kernels and
//! all output channels are equal.

use super::checkpoint::{CheckpointError, ModelCheckpoint};
use super::generator::{GeneratorModel, FIRST_LAYER, LAST_LAYER};
use super::layers::{bias_name, weight_name};
use crate::error::{Error, Result};
use crate::graph::ParamSet;
use crate::tensor::Tensor;

/// `[C_out × 1 × K]` → `[C_out × C × K]`, copying the single input slice.
fn replicate_input_channels(kernel: &Tensor, channels: usize) -> Tensor {
    let (c_out, k) = (kernel.dim(0), kernel.dim(2));
    let mut data = Vec::with_capacity(c_out * channels * k);
    for o in 0..c_out {
        let slice = &kernel.data()[o * k..(o + 1) * k];
        for _ in 0..channels {
            data.extend_from_slice(slice);
        }
    }
    Tensor::new(vec![c_out, channels, k], data).unwrap()
}

/// `[1 × C_in × K]` → `[C × C_in × K]`, copying the single output row.
fn replicate_output_rows(kernel: &Tensor, channels: usize) -> Tensor {
    let mut shape = kernel.shape().to_vec();
    shape[0] = channels;
    let data = kernel.data().repeat(channels);
    Tensor::new(shape, data).unwrap()
}

/// Builds a `io_channels`-channel checkpoint from a mono one.
pub fn transfer_from_mono(mono: &ModelCheckpoint, io_channels: usize) -> Result<ModelCheckpoint> {
    let mono_cfg = mono.generator_config()?;
    if mono_cfg.io_channels != 1 {
        return Err(Error::Config(format!(
            "transfer source must be single-channel, got {} channels",
            mono_cfg.io_channels
        )));
    }
    if io_channels == 0 {
        return Err(Error::Config("target io_channels must be ≥ 1".into()));
    }
    let mut cfg = mono_cfg.clone();
    cfg.io_channels = io_channels;
    let target = GeneratorModel::new(cfg.clone())?;
    let source = GeneratorModel::new(mono_cfg)?;

    // The source must match its own declared topology exactly.
    let expected: Vec<(String, Vec<usize>)> = source.parameter_shapes();
    let actual: Vec<(String, Vec<usize>)> = mono
        .tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    if expected != actual {
        return Err(CheckpointError::BadConfig("mono checkpoint tensors do not match its config".into()).into());
    }

    let first_w = weight_name(FIRST_LAYER);
    let last_w = weight_name(LAST_LAYER);
    let last_b = bias_name(LAST_LAYER);
    let mut out = ParamSet::new();
    for (name, t) in mono.tensors.iter() {
        let moved = if *name == first_w {
            replicate_input_channels(t, io_channels)
        } else if *name == last_w || *name == last_b {
            replicate_output_rows(t, io_channels)
        } else {
            t.clone()
        };
        out.insert(name.clone(), moved);
    }

    let want: Vec<(String, Vec<usize>)> = target.parameter_shapes();
    let got: Vec<(String, Vec<usize>)> = out.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
    debug_assert_eq!(want, got);
    Ok(ModelCheckpoint::generator(&cfg, out, mono.config_text.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generator::GeneratorConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mono() -> ModelCheckpoint {
        let cfg = GeneratorConfig::tiny(1);
        let params = GeneratorModel::new(cfg.clone())
            .unwrap()
            .init_params(&mut ChaCha8Rng::seed_from_u64(11));
        ModelCheckpoint::generator(&cfg, params, "")
    }

    #[test]
    fn first_and_last_layers_are_replicated() {
        let m = mono();
        let t = transfer_from_mono(&m, 4).unwrap();
        let src = m.tensors.get("enc.stem.weight").unwrap();
        let dst = t.tensors.get("enc.stem.weight").unwrap();
        let (c_out, k) = (src.dim(0), src.dim(2));
        for o in 0..c_out {
            for c in 0..4 {
                for j in 0..k {
                    assert_eq!(dst.data()[(o * 4 + c) * k + j], src.data()[o * k + j]);
                }
            }
        }
        assert_eq!(t.tensors.get("enc.stem.bias").unwrap(), m.tensors.get("enc.stem.bias").unwrap());
        let bias = t.tensors.get("dec.out.bias").unwrap();
        assert_eq!(bias.shape(), &[4]);
    }

    #[test]
    fn multichannel_source_is_rejected() {
        let cfg = GeneratorConfig::tiny(2);
        let params = GeneratorModel::new(cfg.clone())
            .unwrap()
            .init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let ck = ModelCheckpoint::generator(&cfg, params, "");
        assert!(transfer_from_mono(&ck, 16).is_err());
    }

    #[test]
    fn topology_mismatch_is_rejected() {
        let mut m = mono();
        m.tensors.insert("enc.block0.res0.conv1.weight", Tensor::zeros(&[1, 1, 1]));
        assert!(transfer_from_mono(&m, 16).is_err());
    }
}
