//! Differentiable generator: convolutions, quantizer, checkpoints and the
//! mono-to-multichannel initializer.

pub mod checkpoint;
pub mod conv;
pub mod generator;
pub(crate) mod layers;
pub mod rvq;
pub mod transfer;

pub use checkpoint::{CheckpointError, ModelCheckpoint};
pub use conv::{conv1d_backward, conv1d_forward, Conv1dLayer, ConvGeometry, ConvGrads, TransposedGeometry};
pub use generator::{build_generator, GeneratorConfig, GeneratorModel, GeneratorOutput};
pub use rvq::{rvq_quantize, Codes, FrozenQuantization, Quantized, ResidualVq};
pub use transfer::transfer_from_mono;
