//! Neural compression of higher-order Ambisonics.
//!
//! A convolutional encoder, residual vector quantizer and decoder operate on
//! all B-format channels at once. Around the model sit a small reverse-mode
//! differentiation engine, the spectral and spatial losses, multichannel
//! discriminators, a training loop, a bitstream container and the
//! Ambisonics utilities used to build and render test material.

pub mod ambisonics;
pub mod audio_io;
pub mod codec;
pub mod discriminators;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, ParamSet, Var};
pub use tensor::Tensor;

pub use ambisonics::{AmbisonicsOrder, BFormatSignal, SpeakerLayout};
pub use audio_io::{DatasetManifest, MultichannelWave};
pub use codec::{bitrate_of, BitstreamHeader, EncodedStream};
pub use discriminators::{DiscriminatorSuite, DiscriminatorSuiteConfig};
pub use dsp::SpectrogramConfig;
pub use losses::LossWeights;
pub use model::{GeneratorConfig, GeneratorModel, ModelCheckpoint};
pub use trainer::{TrainConfig, TrainingData};
