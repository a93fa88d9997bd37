//! Named-parameter helpers shared by the generator and discriminators.

use rand::Rng;

use super::conv::{ConvGeometry, TransposedGeometry};
use crate::graph::{Bound, Graph, ParamSet, Var};
use crate::tensor::Tensor;

pub(crate) fn weight_name(layer: &str) -> String {
    format!("{layer}.weight")
}

pub(crate) fn bias_name(layer: &str) -> String {
    format!("{layer}.bias")
}

pub(crate) fn alpha_name(layer: &str) -> String {
    format!("{layer}.alpha")
}

/// Kernel `[c_out × c_in × k]` with std `gain/√(c_in·k)` and zero bias.
pub(crate) fn init_conv<R: Rng + ?Sized>(
    params: &mut ParamSet,
    layer: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    gain: f64,
    rng: &mut R,
) {
    let std = gain / ((c_in * k) as f64).sqrt();
    params.insert(weight_name(layer), Tensor::randn(&[c_out, c_in, k], std, rng));
    params.insert(bias_name(layer), Tensor::zeros(&[c_out]));
}

/// Transposed kernel `[c_in × c_out × k]`; each output sample sees about
/// `c_in·k/stride` inputs.
pub(crate) fn init_conv_transpose<R: Rng + ?Sized>(
    params: &mut ParamSet,
    layer: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    rng: &mut R,
) {
    let fan_in = (c_in * k).div_ceil(stride).max(1);
    let std = 1.0 / (fan_in as f64).sqrt();
    params.insert(weight_name(layer), Tensor::randn(&[c_in, c_out, k], std, rng));
    params.insert(bias_name(layer), Tensor::zeros(&[c_out]));
}

pub(crate) fn init_snake(params: &mut ParamSet, layer: &str, channels: usize) {
    params.insert(alpha_name(layer), Tensor::full(&[channels], 1.0));
}

pub(crate) fn conv(g: &mut Graph, b: &Bound, layer: &str, x: Var, geo: ConvGeometry) -> Var {
    let w = b.get(&weight_name(layer));
    let bias = b.get(&bias_name(layer));
    g.conv1d(x, w, Some(bias), geo)
}

pub(crate) fn conv_transpose(g: &mut Graph, b: &Bound, layer: &str, x: Var, geo: TransposedGeometry) -> Var {
    let w = b.get(&weight_name(layer));
    let bias = b.get(&bias_name(layer));
    g.conv_transpose1d(x, w, Some(bias), geo)
}

pub(crate) fn snake(g: &mut Graph, b: &Bound, layer: &str, x: Var) -> Var {
    let alpha = b.get(&alpha_name(layer));
    g.snake(x, alpha)
}
