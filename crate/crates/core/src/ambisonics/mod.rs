//! Higher-order Ambisonics in ACN channel order with SN3D normalization.

pub mod bessel;
pub mod harmonics;
pub mod pressure;
pub mod render;

pub use bessel::bessel_j;
pub use harmonics::{acn, acn_to_nm, real_sh};
pub use pressure::{pressure_field, CircularCoefficient, Parity, PressureFieldSpec};
pub use render::{render, SpeakerLayout};

use crate::audio_io::MultichannelWave;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Highest order [`encode_plane_wave`] accepts.
pub const MAX_ENCODE_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AmbisonicsOrder(usize);

impl AmbisonicsOrder {
    pub const fn new(order: usize) -> Self {
        Self(order)
    }

    pub const fn value(self) -> usize {
        self.0
    }

    pub const fn channels(self) -> usize {
        (self.0 + 1) * (self.0 + 1)
    }

    /// The order whose channel count is exactly `channels`, if any.
    pub fn from_channels(channels: usize) -> Option<Self> {
        let n = (channels as f64).sqrt().round() as usize;
        (n >= 1 && n * n == channels).then(|| Self(n - 1))
    }
}

pub fn channel_count(order: AmbisonicsOrder) -> usize {
    order.channels()
}

/// B-format audio `[(order+1)² × frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BFormatSignal {
    order: AmbisonicsOrder,
    sample_rate: u32,
    samples: Tensor,
}

impl BFormatSignal {
    pub fn new(order: AmbisonicsOrder, sample_rate: u32, samples: Tensor) -> Result<Self> {
        if samples.rank() != 2 || samples.dim(0) != order.channels() {
            return Err(Error::Shape(format!(
                "order {} needs {} channels, got samples of shape {:?}",
                order.value(),
                order.channels(),
                samples.shape()
            )));
        }
        if !samples.all_finite() {
            return Err(Error::NonFinite("B-format samples".into()));
        }
        Ok(Self {
            order,
            sample_rate,
            samples,
        })
    }

    /// Interprets a wave as B-format, inferring the order from its channel
    /// count.
    pub fn from_wave(wave: MultichannelWave) -> Result<Self> {
        let order = AmbisonicsOrder::from_channels(wave.n_channels()).ok_or_else(|| {
            Error::Shape(format!("{} channels is not a B-format channel count", wave.n_channels()))
        })?;
        Self::new(order, wave.sample_rate, wave.samples)
    }

    pub fn into_wave(self) -> MultichannelWave {
        MultichannelWave {
            sample_rate: self.sample_rate,
            samples: self.samples,
        }
    }

    pub fn order(&self) -> AmbisonicsOrder {
        self.order
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn n_channels(&self) -> usize {
        self.samples.dim(0)
    }

    pub fn n_frames(&self) -> usize {
        self.samples.dim(1)
    }
}

/// Encodes a mono source arriving from `(azimuth, elevation)`.
pub fn encode_plane_wave(
    azimuth: f64,
    elevation: f64,
    order: AmbisonicsOrder,
    mono: &[f64],
    sample_rate: u32,
) -> Result<BFormatSignal> {
    if order.value() > MAX_ENCODE_ORDER {
        return Err(Error::UnsupportedOrder {
            order: order.value(),
            max: MAX_ENCODE_ORDER,
        });
    }
    let gains = real_sh(order.value(), azimuth, elevation);
    let mut data = Vec::with_capacity(gains.len() * mono.len());
    for g in &gains {
        data.extend(mono.iter().map(|s| g * s));
    }
    BFormatSignal::new(order, sample_rate, Tensor::new(vec![gains.len(), mono.len()], data)?)
}

/// Keeps the first `(new_order+1)²` channels.
pub fn truncate_order(b: &BFormatSignal, new_order: AmbisonicsOrder) -> Result<BFormatSignal> {
    if new_order > b.order {
        return Err(Error::TruncateUpward {
            from: b.order.value(),
            to: new_order.value(),
        });
    }
    let keep = new_order.channels() * b.n_frames();
    let samples = Tensor::new(vec![new_order.channels(), b.n_frames()], b.samples.data()[..keep].to_vec())?;
    BFormatSignal::new(new_order, b.sample_rate, samples)
}
