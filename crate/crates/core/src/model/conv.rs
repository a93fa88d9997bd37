//! One-dimensional convolution and transposed convolution.
//!
//! Output channel `c` of a convolution is
//! `bias(c) + Σₖ kernel(c, k) ⋆ input(k)`, where `⋆` is valid
//! cross-correlation after zero padding, evaluated at every `stride`-th
//! position with kernel taps `dilation` samples apart.
//!
//! The raw kernels work on batched `[N × C × L]` buffers. [`Conv1dLayer`]
//! wraps them for single examples, and the `Graph` methods make them
//! differentiable.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const UNIT: ConvGeometry = ConvGeometry {
        stride: 1,
        dilation: 1,
        padding: 0,
    };

    /// Stride-1 geometry whose output length equals the input length for odd
    /// kernels.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    /// `floor((L + 2·padding − dilation·(K−1) − 1)/stride) + 1`, or `None`
    /// when the padded input is shorter than the dilated kernel.
    pub fn output_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        let span = self.dilation * (kernel - 1) + 1;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransposedGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl TransposedGeometry {
    /// `(L−1)·stride − 2·padding + dilation·(K−1) + output_padding + 1`.
    pub fn output_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let full = (len - 1) * self.stride + self.dilation * (kernel - 1) + self.output_padding + 1;
        (full > 2 * self.padding).then(|| full - 2 * self.padding)
    }
}

/// Values of `t` in `0..count` for which `t·stride + offset` lies in `0..bound`.
fn valid_range(offset: isize, stride: usize, count: usize, bound: usize) -> Range<usize> {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let room = bound as isize - offset;
    let hi = if room <= 0 { 0 } else { (room - 1) / s + 1 };
    let lo = lo as usize;
    let hi = (hi as usize).min(count);
    lo..hi.max(lo)
}

/// Span of the long signal touched by `t·stride + offset`, `t ∈ r`.
fn span(r: &Range<usize>, stride: usize, offset: isize) -> Range<usize> {
    let a = (r.start as isize * stride as isize + offset) as usize;
    let b = ((r.end - 1) as isize * stride as isize + offset) as usize + 1;
    a..b
}

/// Shape bookkeeping shared by the raw kernels.
#[derive(Debug, Clone, Copy)]
struct Dims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    len_in: usize,
    len_out: usize,
}

fn conv_forward_raw(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: Dims, geo: ConvGeometry) -> Vec<f64> {
    let mut y = vec![0.0; d.batch * d.c_out * d.len_out];
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let out = &mut y[(n * d.c_out + co) * d.len_out..][..d.len_out];
            if let Some(b) = bias {
                out.fill(b[co]);
            }
            for ci in 0..d.c_in {
                let xr = &x[(n * d.c_in + ci) * d.len_in..][..d.len_in];
                let wr = &w[(co * d.c_in + ci) * d.kernel..][..d.kernel];
                for (k, &wv) in wr.iter().enumerate() {
                    let off = (k * geo.dilation) as isize - geo.padding as isize;
                    let r = valid_range(off, geo.stride, d.len_out, d.len_in);
                    if r.is_empty() {
                        continue;
                    }
                    let src = &xr[span(&r, geo.stride, off)];
                    if geo.stride == 1 {
                        for (o, &xv) in out[r].iter_mut().zip(src) {
                            *o += wv * xv;
                        }
                    } else {
                        for (o, &xv) in out[r].iter_mut().zip(src.iter().step_by(geo.stride)) {
                            *o += wv * xv;
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns (grad_x, grad_w, grad_b); each is computed only when requested.
fn conv_backward_raw(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    d: Dims,
    geo: ConvGeometry,
    need: [bool; 3],
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut gx = need[0].then(|| vec![0.0; x.len()]);
    let mut gw = need[1].then(|| vec![0.0; w.len()]);
    let mut gb = need[2].then(|| vec![0.0; d.c_out]);
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let g = &gy[(n * d.c_out + co) * d.len_out..][..d.len_out];
            if let Some(gb) = gb.as_mut() {
                gb[co] += g.iter().sum::<f64>();
            }
            for ci in 0..d.c_in {
                let row = (n * d.c_in + ci) * d.len_in;
                let xr = &x[row..][..d.len_in];
                for k in 0..d.kernel {
                    let widx = (co * d.c_in + ci) * d.kernel + k;
                    let off = (k * geo.dilation) as isize - geo.padding as isize;
                    let r = valid_range(off, geo.stride, d.len_out, d.len_in);
                    if r.is_empty() {
                        continue;
                    }
                    let sp = span(&r, geo.stride, off);
                    let gr = &g[r];
                    if let Some(gw) = gw.as_mut() {
                        let xs = &xr[sp.clone()];
                        gw[widx] += if geo.stride == 1 {
                            gr.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>()
                        } else {
                            gr.iter().zip(xs.iter().step_by(geo.stride)).map(|(a, b)| a * b).sum::<f64>()
                        };
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wv = w[widx];
                        let gxs = &mut gx[row..][..d.len_in][sp];
                        if geo.stride == 1 {
                            for (o, &gv) in gxs.iter_mut().zip(gr) {
                                *o += wv * gv;
                            }
                        } else {
                            for (o, &gv) in gxs.iter_mut().step_by(geo.stride).zip(gr) {
                                *o += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn conv_transpose_forward_raw(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    d: Dims,
    geo: TransposedGeometry,
) -> Vec<f64> {
    let mut y = vec![0.0; d.batch * d.c_out * d.len_out];
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let out = &mut y[(n * d.c_out + co) * d.len_out..][..d.len_out];
            if let Some(b) = bias {
                out.fill(b[co]);
            }
            for ci in 0..d.c_in {
                let xr = &x[(n * d.c_in + ci) * d.len_in..][..d.len_in];
                for k in 0..d.kernel {
                    let wv = w[(ci * d.c_out + co) * d.kernel + k];
                    let off = (k * geo.dilation) as isize - geo.padding as isize;
                    let r = valid_range(off, geo.stride, d.len_in, d.len_out);
                    if r.is_empty() {
                        continue;
                    }
                    let sp = span(&r, geo.stride, off);
                    for (o, &xv) in out[sp].iter_mut().step_by(geo.stride).zip(&xr[r]) {
                        *o += wv * xv;
                    }
                }
            }
        }
    }
    y
}

fn conv_transpose_backward_raw(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    d: Dims,
    geo: TransposedGeometry,
    need: [bool; 3],
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut gx = need[0].then(|| vec![0.0; x.len()]);
    let mut gw = need[1].then(|| vec![0.0; w.len()]);
    let mut gb = need[2].then(|| vec![0.0; d.c_out]);
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let g = &gy[(n * d.c_out + co) * d.len_out..][..d.len_out];
            if let Some(gb) = gb.as_mut() {
                gb[co] += g.iter().sum::<f64>();
            }
            for ci in 0..d.c_in {
                let row = (n * d.c_in + ci) * d.len_in;
                let xr = &x[row..][..d.len_in];
                for k in 0..d.kernel {
                    let widx = (ci * d.c_out + co) * d.kernel + k;
                    let off = (k * geo.dilation) as isize - geo.padding as isize;
                    let r = valid_range(off, geo.stride, d.len_in, d.len_out);
                    if r.is_empty() {
                        continue;
                    }
                    let gs = &g[span(&r, geo.stride, off)];
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] += xr[r.clone()]
                            .iter()
                            .zip(gs.iter().step_by(geo.stride))
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wv = w[widx];
                        let gxr = &mut gx[row..][..d.len_in];
                        for (o, &gv) in gxr[r].iter_mut().zip(gs.iter().step_by(geo.stride)) {
                            *o += wv * gv;
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn wrap(data: Option<Vec<f64>>, shape: &[usize]) -> Option<Tensor> {
    data.map(|d| Tensor::new(shape.to_vec(), d).expect("gradient shape"))
}

impl Graph {
    /// Batched convolution of `x: [N × C_in × L]` with `w: [C_out × C_in × K]`
    /// and optional `b: [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, geo: ConvGeometry) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv1d input must be [N × C × L], got {xs:?}");
        assert_eq!(ws.len(), 3, "conv1d kernel must be [C_out × C_in × K]");
        assert_eq!(xs[1], ws[1], "conv1d: input has {} channels, kernel expects {}", xs[1], ws[1]);
        let len_out = geo
            .output_len(xs[2], ws[2])
            .unwrap_or_else(|| panic!("conv1d: input length {} too short for kernel {}", xs[2], ws[2]));
        let d = Dims {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[0],
            kernel: ws[2],
            len_in: xs[2],
            len_out,
        };
        let y = conv_forward_raw(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            d,
            geo,
        );
        let value = Tensor::new(vec![d.batch, d.c_out, len_out], y).unwrap();
        let mut parents = vec![x, w];
        parents.extend(b);
        self.op(
            value,
            &parents,
            Box::new(move |args| {
                let need_b = args.needs.get(2).copied().unwrap_or(false);
                let (gx, gw, gb) = conv_backward_raw(
                    args.inputs[0].data(),
                    args.inputs[1].data(),
                    args.grad.data(),
                    d,
                    geo,
                    [args.needs[0], args.needs[1], need_b],
                );
                let mut out = vec![wrap(gx, args.inputs[0].shape()), wrap(gw, args.inputs[1].shape())];
                if args.inputs.len() == 3 {
                    out.push(wrap(gb, args.inputs[2].shape()));
                }
                out
            }),
        )
    }

    /// Batched transposed convolution of `x: [N × C_in × L]` with
    /// `w: [C_in × C_out × K]` and optional `b: [C_out]`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, geo: TransposedGeometry) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv_transpose1d input must be [N × C × L]");
        assert_eq!(ws.len(), 3, "conv_transpose1d kernel must be [C_in × C_out × K]");
        assert_eq!(xs[1], ws[0], "conv_transpose1d: channel mismatch");
        let len_out = geo
            .output_len(xs[2], ws[2])
            .expect("conv_transpose1d: padding exceeds output length");
        let d = Dims {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[1],
            kernel: ws[2],
            len_in: xs[2],
            len_out,
        };
        let y = conv_transpose_forward_raw(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            d,
            geo,
        );
        let value = Tensor::new(vec![d.batch, d.c_out, len_out], y).unwrap();
        let mut parents = vec![x, w];
        parents.extend(b);
        self.op(
            value,
            &parents,
            Box::new(move |args| {
                let need_b = args.needs.get(2).copied().unwrap_or(false);
                let (gx, gw, gb) = conv_transpose_backward_raw(
                    args.inputs[0].data(),
                    args.inputs[1].data(),
                    args.grad.data(),
                    d,
                    geo,
                    [args.needs[0], args.needs[1], need_b],
                );
                let mut out = vec![wrap(gx, args.inputs[0].shape()), wrap(gw, args.inputs[1].shape())];
                if args.inputs.len() == 3 {
                    out.push(wrap(gb, args.inputs[2].shape()));
                }
                out
            }),
        )
    }
}

/// A single convolution layer with concrete weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayer {
    /// `[C_out × C_in × K]`
    pub kernel: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    pub geometry: ConvGeometry,
}

/// Gradients of a convolution with respect to its kernel, bias and input.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

impl Conv1dLayer {
    pub fn new(kernel: Tensor, bias: Tensor, geometry: ConvGeometry) -> Result<Self> {
        if kernel.rank() != 3 || bias.shape() != [kernel.dim(0)] {
            return Err(Error::Shape(format!(
                "kernel {:?} and bias {:?} are inconsistent",
                kernel.shape(),
                bias.shape()
            )));
        }
        if kernel.dim(2) == 0 || geometry.stride == 0 || geometry.dilation == 0 {
            return Err(Error::Config("kernel size, stride and dilation must be ≥ 1".into()));
        }
        Ok(Self { kernel, bias, geometry })
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim(0)
    }

    fn dims(&self, input: &Tensor) -> Result<Dims> {
        if input.rank() != 2 || input.dim(0) != self.in_channels() {
            return Err(Error::Shape(format!(
                "layer expects [{} × L] input, got {:?}",
                self.in_channels(),
                input.shape()
            )));
        }
        if !input.all_finite() {
            return Err(Error::NonFinite("convolution input".into()));
        }
        let len_out = self
            .geometry
            .output_len(input.dim(1), self.kernel.dim(2))
            .ok_or_else(|| Error::Shape("input shorter than the dilated kernel".into()))?;
        Ok(Dims {
            batch: 1,
            c_in: self.in_channels(),
            c_out: self.out_channels(),
            kernel: self.kernel.dim(2),
            len_in: input.dim(1),
            len_out,
        })
    }

    /// `input: [C_in × L]` → `[C_out × L_out]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let d = self.dims(input)?;
        let y = conv_forward_raw(
            input.data(),
            self.kernel.data(),
            Some(self.bias.data()),
            d,
            self.geometry,
        );
        Tensor::new(vec![d.c_out, d.len_out], y)
    }

    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<ConvGrads> {
        let d = self.dims(input)?;
        if upstream.shape() != [d.c_out, d.len_out] {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output [{} × {}]",
                upstream.shape(),
                d.c_out,
                d.len_out
            )));
        }
        let (gx, gw, gb) = conv_backward_raw(
            input.data(),
            self.kernel.data(),
            upstream.data(),
            d,
            self.geometry,
            [true; 3],
        );
        Ok(ConvGrads {
            kernel: Tensor::new(self.kernel.shape().to_vec(), gw.unwrap())?,
            bias: Tensor::new(vec![d.c_out], gb.unwrap())?,
            input: Tensor::new(input.shape().to_vec(), gx.unwrap())?,
        })
    }
}

/// Free-function form of [`Conv1dLayer::forward`].
pub fn conv1d_forward(layer: &Conv1dLayer, input: &Tensor) -> Result<Tensor> {
    layer.forward(input)
}

/// Free-function form of [`Conv1dLayer::backward`].
pub fn conv1d_backward(layer: &Conv1dLayer, input: &Tensor, upstream: &Tensor) -> Result<ConvGrads> {
    layer.backward(input, upstream)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let layer = Conv1dLayer::new(t(&[1, 1, 1], &[1.0]), t(&[1], &[0.0]), ConvGeometry::UNIT).unwrap();
        let x = t(&[1, 4], &[1.0, -2.0, 3.0, 0.5]);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn channels_are_summed() {
        let layer =
            Conv1dLayer::new(t(&[1, 2, 1], &[1.0, 1.0]), t(&[1], &[0.0]), ConvGeometry::UNIT).unwrap();
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
        assert_eq!(layer.forward(&x).unwrap().data(), &[11.0, 22.0, 33.0]);
    }

    #[test]
    fn output_length_formula() {
        let geo = ConvGeometry {
            stride: 3,
            dilation: 2,
            padding: 1,
        };
        // floor((10 + 2 − 2·4 − 1)/3) + 1 = 2
        assert_eq!(geo.output_len(10, 5), Some(2));
        assert_eq!(geo.output_len(3, 5), None);
    }

    #[test]
    fn channel_mismatch_and_nan_are_errors() {
        let layer = Conv1dLayer::new(t(&[1, 2, 1], &[1.0, 1.0]), t(&[1], &[0.0]), ConvGeometry::UNIT).unwrap();
        assert!(matches!(layer.forward(&Tensor::zeros(&[3, 4])), Err(Error::Shape(_))));
        let x = t(&[2, 1], &[f64::NAN, 0.0]);
        assert!(matches!(layer.forward(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let layer = Conv1dLayer::new(t(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), t(&[2], &[0.5, -0.5]), ConvGeometry::same(3, 1))
            .unwrap();
        let x = t(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let g = layer.backward(&x, &Tensor::zeros(&[2, 5])).unwrap();
        assert_eq!(g.kernel.max_abs(), 0.0);
        assert_eq!(g.bias.max_abs(), 0.0);
        assert_eq!(g.input.max_abs(), 0.0);
    }

    #[test]
    fn bias_gradient_sums_upstream() {
        let layer = Conv1dLayer::new(t(&[1, 1, 2], &[0.3, 0.7]), t(&[1], &[0.0]), ConvGeometry::UNIT).unwrap();
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let up = t(&[1, 3], &[0.5, -1.0, 2.0]);
        let g = layer.backward(&x, &up).unwrap();
        assert_eq!(g.bias.data(), &[1.5]);
    }

    #[test]
    fn transposed_conv_inverts_stride_arithmetic() {
        // Kernel 2s, padding ⌈s/2⌉ and output padding s mod 2 upsample by exactly s.
        for s in 2..=8usize {
            let geo = TransposedGeometry {
                stride: s,
                dilation: 1,
                padding: s.div_ceil(2),
                output_padding: s % 2,
            };
            assert_eq!(geo.output_len(7, 2 * s), Some(7 * s), "stride {s}");
            let down = ConvGeometry {
                stride: s,
                dilation: 1,
                padding: s.div_ceil(2),
            };
            assert_eq!(down.output_len(7 * s, 2 * s), Some(7), "stride {s}");
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // ⟨conv(x), y⟩ = ⟨x, convᵀ(y)⟩ with the kernel axes swapped.
        let geo = ConvGeometry {
            stride: 2,
            dilation: 1,
            padding: 1,
        };
        let tgeo = TransposedGeometry {
            stride: 2,
            dilation: 1,
            padding: 1,
            output_padding: 0,
        };
        let w = t(&[1, 1, 4], &[0.1, -0.4, 0.9, 0.3]);
        let x = t(&[1, 1, 8], &[1.0, 2.0, -1.0, 0.5, 3.0, -2.0, 0.25, 1.5]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let y = g.conv1d(xv, wv, None, geo);
        let ylen = g.shape(y)[2];
        let probe = Tensor::new(vec![1, 1, ylen], (0..ylen).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let lhs: f64 = g.value(y).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let pv = g.constant(probe);
        let back = g.conv_transpose1d(pv, wv, None, tgeo);
        assert_eq!(g.shape(back), &[1, 1, 8]);
        let rhs: f64 = g.value(back).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }
}
