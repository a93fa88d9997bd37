//! Convolutional encoder, residual quantizer and mirrored decoder.
//!
//! Only the first encoder convolution and the last decoder convolution see
//! the audio channel count; everything in between, including the latent
//! width and the quantizer, is independent of it. A 16-channel model
//! therefore has exactly the bottleneck (and bitrate) of its mono
//! counterpart.
//!
//! Layout, for strides `s₀..sₙ` and widths `d₀..dₙ`:
//!
//! ```text
//! encoder: conv(io→d₀, 7)
//!          per block i: residual units(wᵢ) · snake · conv(wᵢ→dᵢ, 2sᵢ, stride sᵢ)
//!          snake · conv(dₙ→latent, 3)
//! decoder: conv(latent→dₙ, 7)
//!          per block i (reversed): snake · convᵀ(dᵢ→wᵢ, 2sᵢ, stride sᵢ) · residual units(wᵢ)
//!          snake · conv(d₀→io, 7)
//! ```
//!
//! where `wᵢ = dᵢ₋₁` (and `w₀ = d₀`). The decoder output is linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{ConvGeometry, TransposedGeometry};
use super::layers::{self, bias_name, weight_name};
use super::rvq::{Codes, FrozenQuantization, ResidualVq};
use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, ParamSet, Var};
use crate::tensor::Tensor;

pub const FIRST_LAYER: &str = "enc.stem";
pub const LAST_LAYER: &str = "dec.out";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub io_channels: usize,
    pub sample_rate: u32,
    pub encoder_dims: Vec<usize>,
    pub strides: Vec<usize>,
    pub latent_dim: usize,
    pub n_codebooks: usize,
    pub codebook_size: usize,
    /// Dilations of the residual units inside each block.
    pub residual_dilations: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            io_channels: 16,
            sample_rate: 44_100,
            encoder_dims: vec![32, 64, 128],
            strides: vec![2, 4, 8],
            latent_dim: 64,
            n_codebooks: 3,
            codebook_size: 256,
            residual_dilations: vec![1, 3, 9],
        }
    }
}

impl GeneratorConfig {
    /// A very small model for experiments that must finish in minutes on
    /// one core.
    pub fn tiny(io_channels: usize) -> Self {
        Self {
            io_channels,
            sample_rate: 44_100,
            encoder_dims: vec![8, 16],
            strides: vec![2, 4],
            latent_dim: 8,
            n_codebooks: 4,
            codebook_size: 16,
            residual_dilations: vec![1],
        }
    }

    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    /// Latent frames per second.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.total_stride() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("generator: {msg}")));
        if self.io_channels == 0 {
            return bad("io_channels must be ≥ 1");
        }
        if self.strides.is_empty() || self.strides.len() != self.encoder_dims.len() {
            return bad("need one encoder width per stride and at least one block");
        }
        if self.strides.iter().any(|&s| s < 2) {
            return bad("strides must be ≥ 2");
        }
        if self.encoder_dims.contains(&0) {
            return bad("widths must be ≥ 1");
        }
        if self.latent_dim == 0 || self.n_codebooks == 0 || self.codebook_size == 0 {
            return bad("latent_dim, n_codebooks and codebook_size must be ≥ 1");
        }
        if self.residual_dilations.contains(&0) {
            return bad("dilations must be ≥ 1");
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        Ok(())
    }

    pub fn quantizer(&self) -> ResidualVq {
        ResidualVq {
            n_codebooks: self.n_codebooks,
            codebook_size: self.codebook_size,
            dim: self.latent_dim,
        }
    }

    /// Input width of block `i`.
    fn block_input(&self, i: usize) -> usize {
        if i == 0 {
            self.encoder_dims[0]
        } else {
            self.encoder_dims[i - 1]
        }
    }
}

const KERNEL: usize = 7;

fn down_geometry(stride: usize) -> ConvGeometry {
    ConvGeometry {
        stride,
        dilation: 1,
        padding: stride.div_ceil(2),
    }
}

fn up_geometry(stride: usize) -> TransposedGeometry {
    TransposedGeometry {
        stride,
        dilation: 1,
        padding: stride.div_ceil(2),
        output_padding: stride % 2,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorModel {
    config: GeneratorConfig,
}

/// Outputs of [`GeneratorModel::forward`].
pub struct GeneratorOutput {
    /// `[N × io × L]`, same length as the input.
    pub reconstruction: Var,
    pub codes: Vec<Codes>,
    pub codebook_loss: Var,
    pub commitment_loss: Var,
    pub frozen: FrozenQuantization,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn quantizer(&self) -> ResidualVq {
        self.config.quantizer()
    }

    /// Random initial parameters.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let c = &self.config;
        let mut p = ParamSet::new();
        let n = c.strides.len();
        layers::init_conv(&mut p, FIRST_LAYER, c.encoder_dims[0], c.io_channels, KERNEL, 1.0, rng);
        for i in 0..n {
            let w = c.block_input(i);
            let d = c.encoder_dims[i];
            let s = c.strides[i];
            self.init_residual_units(&mut p, &format!("enc.block{i}"), w, rng);
            layers::init_snake(&mut p, &format!("enc.block{i}.snake"), w);
            layers::init_conv(&mut p, &format!("enc.block{i}.down"), d, w, 2 * s, 1.0, rng);
        }
        let top = c.encoder_dims[n - 1];
        layers::init_snake(&mut p, "enc.out.snake", top);
        layers::init_conv(&mut p, "enc.out", c.latent_dim, top, 3, 1.0, rng);
        self.quantizer().init_params(&mut p, rng);
        layers::init_conv(&mut p, "dec.stem", top, c.latent_dim, KERNEL, 1.0, rng);
        for i in (0..n).rev() {
            let w = c.block_input(i);
            let d = c.encoder_dims[i];
            let s = c.strides[i];
            layers::init_snake(&mut p, &format!("dec.block{i}.snake"), d);
            layers::init_conv_transpose(&mut p, &format!("dec.block{i}.up"), d, w, 2 * s, s, rng);
            self.init_residual_units(&mut p, &format!("dec.block{i}"), w, rng);
        }
        layers::init_snake(&mut p, "dec.out.snake", c.encoder_dims[0]);
        layers::init_conv(&mut p, LAST_LAYER, c.io_channels, c.encoder_dims[0], KERNEL, 1.0, rng);
        p
    }

    fn init_residual_units<R: Rng + ?Sized>(&self, p: &mut ParamSet, prefix: &str, width: usize, rng: &mut R) {
        for (j, _) in self.config.residual_dilations.iter().enumerate() {
            let unit = format!("{prefix}.res{j}");
            layers::init_snake(p, &format!("{unit}.snake1"), width);
            layers::init_conv(p, &format!("{unit}.conv1"), width, width, KERNEL, 1.0, rng);
            layers::init_snake(p, &format!("{unit}.snake2"), width);
            // Residual branches start small so stacked units stay near identity.
            layers::init_conv(p, &format!("{unit}.conv2"), width, width, 1, 0.5, rng);
        }
    }

    fn residual_units(&self, g: &mut Graph, b: &Bound, prefix: &str, mut x: Var) -> Var {
        for (j, &dil) in self.config.residual_dilations.iter().enumerate() {
            let unit = format!("{prefix}.res{j}");
            let h = layers::snake(g, b, &format!("{unit}.snake1"), x);
            let h = layers::conv(g, b, &format!("{unit}.conv1"), h, ConvGeometry::same(KERNEL, dil));
            let h = layers::snake(g, b, &format!("{unit}.snake2"), h);
            let h = layers::conv(g, b, &format!("{unit}.conv2"), h, ConvGeometry::UNIT);
            x = g.add(x, h);
        }
        x
    }

    /// `[N × io × L]` → `[N × latent × L/stride]`; `L` must be a multiple of
    /// the total stride.
    pub fn encode(&self, g: &mut Graph, b: &Bound, audio: Var) -> Var {
        let c = &self.config;
        let mut x = layers::conv(g, b, FIRST_LAYER, audio, ConvGeometry::same(KERNEL, 1));
        for (i, &s) in c.strides.iter().enumerate() {
            x = self.residual_units(g, b, &format!("enc.block{i}"), x);
            x = layers::snake(g, b, &format!("enc.block{i}.snake"), x);
            x = layers::conv(g, b, &format!("enc.block{i}.down"), x, down_geometry(s));
        }
        x = layers::snake(g, b, "enc.out.snake", x);
        layers::conv(g, b, "enc.out", x, ConvGeometry::same(3, 1))
    }

    /// `[N × latent × T]` → `[N × io × T·stride]`.
    pub fn decode(&self, g: &mut Graph, b: &Bound, latent: Var) -> Var {
        let c = &self.config;
        let mut x = layers::conv(g, b, "dec.stem", latent, ConvGeometry::same(KERNEL, 1));
        for (i, &s) in c.strides.iter().enumerate().rev() {
            x = layers::snake(g, b, &format!("dec.block{i}.snake"), x);
            x = layers::conv_transpose(g, b, &format!("dec.block{i}.up"), x, up_geometry(s));
            x = self.residual_units(g, b, &format!("dec.block{i}"), x);
        }
        x = layers::snake(g, b, "dec.out.snake", x);
        layers::conv(g, b, LAST_LAYER, x, ConvGeometry::same(KERNEL, 1))
    }

    /// Full encode → quantize → decode pass over `[N × io × L]`. Inputs whose
    /// length is not a multiple of the total stride are zero-padded at the
    /// end and the output is cropped back.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        audio: Var,
        frozen: Option<&FrozenQuantization>,
    ) -> Result<GeneratorOutput> {
        let shape = g.shape(audio).to_vec();
        if shape.len() != 3 || shape[1] != self.config.io_channels {
            return Err(Error::Shape(format!(
                "generator expects [N × {} × L], got {shape:?}",
                self.config.io_channels
            )));
        }
        if !g.value(audio).all_finite() {
            return Err(Error::NonFinite("generator input".into()));
        }
        let len = shape[2];
        let padded_len = len.div_ceil(self.config.total_stride()).max(1) * self.config.total_stride();
        let input = if padded_len == len {
            audio
        } else {
            pad_end(g, audio, padded_len)
        };
        let latent = self.encode(g, b, input);
        check_finite(g, latent, "encoder output")?;
        let q = self.quantizer().forward(g, b, latent, frozen)?;
        let mut recon = self.decode(g, b, q.quantized);
        if padded_len != len {
            recon = crop_end(g, recon, len);
        }
        check_finite(g, recon, "decoder output")?;
        Ok(GeneratorOutput {
            reconstruction: recon,
            codes: q.codes,
            codebook_loss: q.codebook_loss,
            commitment_loss: q.commitment_loss,
            frozen: q.frozen,
        })
    }

    /// Inference on concrete values: `[io × L]` → reconstruction and codes.
    pub fn reconstruct(&self, params: &ParamSet, audio: &Tensor) -> Result<(Tensor, Codes)> {
        let mut g = Graph::new();
        let b = g.bind(params, false);
        let x = g.constant(audio.clone().reshape(vec![1, audio.dim(0), audio.dim(1)])?);
        let out = self.forward(&mut g, &b, x, None)?;
        let recon = g.value(out.reconstruction).select(0);
        Ok((recon, out.codes.into_iter().next().unwrap()))
    }

    /// Codes for `[io × L]`, padding to a whole number of frames.
    pub fn encode_codes(&self, params: &ParamSet, audio: &Tensor) -> Result<Codes> {
        let stride = self.config.total_stride();
        let len = audio.dim(1);
        let padded = len.div_ceil(stride).max(1) * stride;
        let mut g = Graph::new();
        let b = g.bind(params, false);
        let x = g.constant(audio.clone().reshape(vec![1, audio.dim(0), len])?);
        let x = if padded == len { x } else { pad_end(&mut g, x, padded) };
        let latent = self.encode(&mut g, &b, x);
        check_finite(&g, latent, "encoder output")?;
        let q = self.quantizer().forward(&mut g, &b, latent, None)?;
        Ok(q.codes.into_iter().next().unwrap())
    }

    /// Audio `[io × frames·stride]` from codes.
    pub fn decode_codes(&self, params: &ParamSet, codes: &Codes) -> Result<Tensor> {
        let z = self.quantizer().dequantize(params, codes)?;
        let mut g = Graph::new();
        let b = g.bind(params, false);
        let zv = g.constant(z.reshape(vec![1, self.config.latent_dim, codes.frames])?);
        let y = self.decode(&mut g, &b, zv);
        check_finite(&g, y, "decoder output")?;
        Ok(g.value(y).select(0))
    }

    /// Shapes of every parameter, for topology checks.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        // Shapes do not depend on values; a fixed seed keeps this cheap and pure.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.init_params(&mut rng)
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }

    pub fn first_layer_names() -> [String; 2] {
        [weight_name(FIRST_LAYER), bias_name(FIRST_LAYER)]
    }

    pub fn last_layer_names() -> [String; 2] {
        [weight_name(LAST_LAYER), bias_name(LAST_LAYER)]
    }
}

fn check_finite(g: &Graph, v: Var, what: &str) -> Result<()> {
    if g.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Zero-pads the last axis of `[N × C × L]` to `new_len`.
fn pad_end(g: &mut Graph, x: Var, new_len: usize) -> Var {
    let shape = g.shape(x).to_vec();
    let (rows, len) = (shape[0] * shape[1], shape[2]);
    let mut data = vec![0.0; rows * new_len];
    for (r, src) in g.value(x).data().chunks(len).enumerate() {
        data[r * new_len..r * new_len + len].copy_from_slice(src);
    }
    let value = Tensor::new(vec![shape[0], shape[1], new_len], data).unwrap();
    g.op(
        value,
        &[x],
        Box::new(move |args| {
            let mut gx = Vec::with_capacity(rows * len);
            for r in 0..rows {
                gx.extend_from_slice(&args.grad.data()[r * new_len..r * new_len + len]);
            }
            vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), gx).unwrap())]
        }),
    )
}

/// Keeps the first `new_len` samples of the last axis.
fn crop_end(g: &mut Graph, x: Var, new_len: usize) -> Var {
    let shape = g.shape(x).to_vec();
    let (rows, len) = (shape[0] * shape[1], shape[2]);
    let idx: Vec<usize> = (0..rows).flat_map(|r| (0..new_len).map(move |t| r * len + t)).collect();
    g.gather(x, std::sync::Arc::new(idx), vec![shape[0], shape[1], new_len])
}

/// Free-function form of [`GeneratorModel::new`].
pub fn build_generator(config: GeneratorConfig) -> Result<GeneratorModel> {
    GeneratorModel::new(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(io: usize) -> (GeneratorModel, ParamSet) {
        let m = GeneratorModel::new(GeneratorConfig::tiny(io)).unwrap();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        (m, p)
    }

    #[test]
    fn io_layers_follow_channel_count() {
        let (_, p) = tiny(16);
        assert_eq!(p.get("enc.stem.weight").unwrap().shape(), &[8, 16, 7]);
        assert_eq!(p.get("dec.out.weight").unwrap().shape(), &[16, 8, 7]);
        let (_, mono) = tiny(1);
        assert_eq!(mono.get("enc.stem.weight").unwrap().shape(), &[8, 1, 7]);
        // Interior tensors are identical in shape.
        for (name, t) in mono.iter() {
            if !name.starts_with("enc.stem") && !name.starts_with("dec.out.") {
                assert_eq!(p.get(name).unwrap().shape(), t.shape(), "{name}");
            }
        }
    }

    #[test]
    fn shape_is_preserved() {
        let (m, p) = tiny(16);
        for len in [8usize, 64, 100] {
            let x = Tensor::randn(&[16, len], 0.1, &mut ChaCha8Rng::seed_from_u64(1));
            let (y, codes) = m.reconstruct(&p, &x).unwrap();
            assert_eq!(y.shape(), &[16, len]);
            assert_eq!(codes.frames, len.div_ceil(8));
        }
    }

    #[test]
    fn zero_final_layer_gives_silence() {
        let (m, mut p) = tiny(16);
        for name in GeneratorModel::last_layer_names() {
            let t = p.get_mut(&name).unwrap();
            t.data_mut().fill(0.0);
        }
        let x = Tensor::randn(&[16, 64], 0.3, &mut ChaCha8Rng::seed_from_u64(2));
        let (y, _) = m.reconstruct(&p, &x).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn frame_rate_composes_strides() {
        let c = GeneratorConfig::default();
        assert_eq!(c.total_stride(), 64);
        assert!((c.frame_rate() - 44_100.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = GeneratorConfig::tiny(16);
        c.strides.push(2);
        assert!(GeneratorModel::new(c).is_err());
        assert!(GeneratorModel::new(GeneratorConfig::tiny(0)).is_err());
    }

    #[test]
    fn nan_input_is_reported() {
        let (m, p) = tiny(2);
        let mut x = Tensor::zeros(&[2, 16]);
        x.data_mut()[3] = f64::NAN;
        assert!(matches!(m.reconstruct(&p, &x), Err(Error::NonFinite(_))));
    }
}
