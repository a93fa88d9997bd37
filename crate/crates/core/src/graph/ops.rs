//! Elementwise, reduction and indexing operations.

use std::sync::Arc;

use super::{Graph, Var};
use crate::tensor::Tensor;

/// Mean squared difference of two equally shaped tensors.
pub fn mse_value(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.numel().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.op(
            value,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.op(
            value,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.scale(-1.0))]),
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.op(
            value,
            &[a, b],
            Box::new(|args| {
                let ga = args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y));
                let gb = args.needs[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x));
                vec![ga, gb]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.op(value, &[a], Box::new(move |args| vec![Some(args.grad.scale(s))]))
    }

    /// `a + offset` where `offset` is a constant.
    pub fn add_constant(&mut self, a: Var, offset: &Tensor) -> Var {
        assert_eq!(self.shape(a), offset.shape(), "add_constant: shape mismatch");
        let value = self.value(a).zip_map(offset, |x, y| x + y);
        self.op(value, &[a], Box::new(|args| vec![Some(args.grad.clone())]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.op(
            value,
            &[a],
            Box::new(|args| {
                let g = args.grad.item();
                vec![Some(Tensor::full(args.inputs[0].shape(), g))]
            }),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Σ wᵢ·termᵢ over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let weights: Vec<f64> = terms.iter().map(|t| t.1).collect();
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let value = terms
            .iter()
            .map(|(v, w)| w * self.value(*v).item())
            .sum::<f64>();
        self.op(
            Tensor::scalar(value),
            &parents,
            Box::new(move |args| {
                let g = args.grad.item();
                weights
                    .iter()
                    .zip(args.needs)
                    .map(|(w, &need)| need.then(|| Tensor::scalar(g * w)))
                    .collect()
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let in_shape = self.shape(a).to_vec();
        let value = self
            .value(a)
            .clone()
            .reshape(shape)
            .expect("reshape: element count mismatch");
        self.op(
            value,
            &[a],
            Box::new(move |args| {
                vec![Some(args.grad.clone().reshape(in_shape.clone()).unwrap())]
            }),
        )
    }

    /// `out[i] = a[indices[i]]`, reshaped to `shape`. Covers slicing, folding,
    /// padding by reflection and table lookup.
    pub fn gather(&mut self, a: Var, indices: Arc<Vec<usize>>, shape: Vec<usize>) -> Var {
        let src = self.value(a).data();
        let data: Vec<f64> = indices.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape, data).expect("gather: index count does not match shape");
        self.op(
            value,
            &[a],
            Box::new(move |args| {
                let mut g = Tensor::zeros(args.inputs[0].shape());
                let gd = g.data_mut();
                for (&i, &v) in indices.iter().zip(args.grad.data()) {
                    gd[i] += v;
                }
                vec![Some(g)]
            }),
        )
    }

    /// Snake activation `x + sin²(αx)/(α + 1e-9)` over `[N × C × L]` with a
    /// per-channel `α`.
    pub fn snake(&mut self, x: Var, alpha: Var) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "snake expects [N × C × L]");
        assert_eq!(self.shape(alpha), &[shape[1]], "snake: alpha length");
        let (channels, len) = (shape[1], shape[2]);
        let xv = self.value(x);
        let av = self.value(alpha).data();
        let mut out = xv.clone();
        for (row_idx, row) in out.data_mut().chunks_mut(len).enumerate() {
            let a = av[row_idx % channels];
            let inv = 1.0 / (a + 1e-9);
            for v in row {
                let s = (a * *v).sin();
                *v += inv * s * s;
            }
        }
        self.op(
            out,
            &[x, alpha],
            Box::new(move |args| {
                let xv = args.inputs[0].data();
                let av = args.inputs[1].data();
                let gout = args.grad.data();
                let mut gx = args.needs[0].then(|| Tensor::zeros(args.inputs[0].shape()));
                let mut ga = args.needs[1].then(|| vec![0.0; channels]);
                for (row_idx, (xr, gr)) in xv.chunks(len).zip(gout.chunks(len)).enumerate() {
                    let c = row_idx % channels;
                    let a = av[c];
                    let inv = 1.0 / (a + 1e-9);
                    let mut acc_a = 0.0;
                    for (t, (&xi, &gi)) in xr.iter().zip(gr).enumerate() {
                        let (s, co) = (a * xi).sin_cos();
                        // d/dx: 1 + (α/(α+ε))·sin(2αx)
                        if let Some(gx) = gx.as_mut() {
                            gx.data_mut()[row_idx * len + t] = gi * (1.0 + inv * 2.0 * s * co * a);
                        }
                        // d/dα: −sin²/(α+ε)² + x·sin(2αx)/(α+ε)
                        acc_a += gi * (-inv * inv * s * s + inv * 2.0 * s * co * xi);
                    }
                    if let Some(ga) = ga.as_mut() {
                        ga[c] += acc_a;
                    }
                }
                vec![gx, ga.map(|g| Tensor::new(vec![channels], g).unwrap())]
            }),
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.op(
            value,
            &[x],
            Box::new(move |args| {
                vec![Some(args.grad.zip_map(args.inputs[0], |g, v| {
                    if v > 0.0 {
                        g
                    } else {
                        slope * g
                    }
                }))]
            }),
        )
    }

    /// `ln(x + eps)`.
    pub fn log_eps(&mut self, x: Var, eps: f64) -> Var {
        let value = self.value(x).map(|v| (v + eps).ln());
        self.op(
            value,
            &[x],
            Box::new(move |args| {
                vec![Some(args.grad.zip_map(args.inputs[0], |g, v| g / (v + eps)))]
            }),
        )
    }

    /// Mean absolute difference to a constant target. The subgradient at a
    /// tie is zero.
    pub fn l1_to(&mut self, x: Var, target: &Tensor) -> Var {
        assert_eq!(self.shape(x), target.shape(), "l1_to: shape mismatch");
        let n = target.numel() as f64;
        let diff = self.value(x).zip_map(target, |a, b| a - b);
        let value = diff.data().iter().map(|d| d.abs()).sum::<f64>() / n;
        self.op(
            Tensor::scalar(value),
            &[x],
            Box::new(move |args| {
                let g = args.grad.item() / n;
                vec![Some(diff.map(|d| g * sign(d)))]
            }),
        )
    }

    /// Mean squared difference to a constant target.
    pub fn mse_to(&mut self, x: Var, target: &Tensor) -> Var {
        assert_eq!(self.shape(x), target.shape(), "mse_to: shape mismatch");
        let n = target.numel() as f64;
        let diff = self.value(x).zip_map(target, |a, b| a - b);
        let value = diff.sq_norm() / n;
        self.op(
            Tensor::scalar(value),
            &[x],
            Box::new(move |args| {
                let g = 2.0 * args.grad.item() / n;
                vec![Some(diff.scale(g))]
            }),
        )
    }

    /// Mean of `(x − c)²` for a scalar `c`.
    pub fn mse_to_scalar(&mut self, x: Var, c: f64) -> Var {
        let target = Tensor::full(self.shape(x), c);
        self.mse_to(x, &target)
    }

    /// Non-overlapping average pooling along the last axis of `[N × C × L]`.
    /// Trailing samples that do not fill a window are dropped.
    pub fn avg_pool1d(&mut self, x: Var, k: usize) -> Var {
        assert!(k >= 1);
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "avg_pool1d expects [N × C × L]");
        let len = shape[2];
        let out_len = len / k;
        let rows = shape[0] * shape[1];
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let row = &xv[r * len..(r + 1) * len];
            out.extend((0..out_len).map(|t| row[t * k..(t + 1) * k].iter().sum::<f64>() / k as f64));
        }
        let value = Tensor::new(vec![shape[0], shape[1], out_len], out).unwrap();
        self.op(
            value,
            &[x],
            Box::new(move |args| {
                let mut g = Tensor::zeros(args.inputs[0].shape());
                let gd = g.data_mut();
                let go = args.grad.data();
                for r in 0..rows {
                    for t in 0..out_len {
                        let v = go[r * out_len + t] / k as f64;
                        for s in 0..k {
                            gd[r * len + t * k + s] = v;
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn l1_subgradient_is_zero_at_ties() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let loss = g.l1_to(x, &t(&[3], &[1.0, 0.0, 5.0]));
        assert!((g.value(loss).item() - 4.0 / 3.0).abs() < 1e-15);
        let grads = g.backward(loss).unwrap();
        let gx = grads.get(x).unwrap().data().to_vec();
        assert_eq!(gx, vec![0.0, 1.0 / 3.0, -1.0 / 3.0]);
    }

    #[test]
    fn avg_pool_drops_tail() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 5], &[1.0, 3.0, 5.0, 7.0, 100.0]));
        let y = g.avg_pool1d(x, 2);
        assert_eq!(g.value(y).data(), &[2.0, 6.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.5, 0.5, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn gather_scatters_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.gather(x, Arc::new(vec![2, 0, 2]), vec![3]);
        assert_eq!(g.value(y).data(), &[3.0, 1.0, 3.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn snake_with_unit_alpha_matches_formula() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2], &[0.5, -1.0]));
        let a = g.constant(t(&[1], &[1.0]));
        let y = g.snake(x, a);
        let expect: Vec<f64> = [0.5f64, -1.0]
            .iter()
            .map(|v| v + v.sin().powi(2) / (1.0 + 1e-9))
            .collect();
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
