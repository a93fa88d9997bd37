//! Broadband inter-channel correlation loss.
//!
//! Both signals are reduced to their Pearson correlation matrices
//! `r_ij = C_ij / √(C_ii C_jj + ε)` and compared entrywise:
//! `L = ½ Σ_i Σ_j |r_ij − r̂_ij|`. The diagonal is 1 by definition in both
//! matrices and never contributes.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Regularizer under the square root, keeping silent channels finite.
pub const COVARIANCE_EPS: f64 = 1e-9;

/// Sample covariance (divisor L − 1) and the mean-removed rows.
fn covariance(x: &[f64], n: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut centred = x.to_vec();
    for row in centred.chunks_mut(len) {
        let mean = row.iter().sum::<f64>() / len as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let a = &centred[i * len..(i + 1) * len];
            let b = &centred[j * len..(j + 1) * len];
            let v = a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (len - 1) as f64;
            c[i * n + j] = v;
            c[j * n + i] = v;
        }
    }
    (c, centred)
}

fn correlation_from(c: &[f64], n: usize) -> Vec<f64> {
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            r[i * n + j] = if i == j {
                1.0
            } else {
                c[i * n + j] / (c[i * n + i] * c[j * n + j] + COVARIANCE_EPS).sqrt()
            };
        }
    }
    r
}

fn check_signal(signal: &Tensor) -> Result<(usize, usize)> {
    if signal.rank() != 2 || signal.dim(1) < 2 {
        return Err(Error::Shape(format!(
            "correlation needs [channels × L ≥ 2], got {:?}",
            signal.shape()
        )));
    }
    Ok((signal.dim(0), signal.dim(1)))
}

/// Pearson correlation matrix `[n × n]` of `[n × L]`.
pub fn normalized_covariance(signal: &Tensor) -> Result<Tensor> {
    let (n, len) = check_signal(signal)?;
    let (c, _) = covariance(signal.data(), n, len);
    Tensor::new(vec![n, n], correlation_from(&c, n))
}

fn check_pair(reference: &Tensor, reconstruction: &Tensor) -> Result<(usize, usize)> {
    if reference.shape() != reconstruction.shape() {
        return Err(Error::Shape(format!(
            "covariance loss shapes differ: {:?} vs {:?}",
            reference.shape(),
            reconstruction.shape()
        )));
    }
    check_signal(reference)
}

fn loss_from(r: &[f64], r_hat: &[f64]) -> f64 {
    0.5 * r.iter().zip(r_hat).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn covariance_loss(reference: &Tensor, reconstruction: &Tensor) -> Result<f64> {
    let (n, len) = check_pair(reference, reconstruction)?;
    let r = correlation_from(&covariance(reference.data(), n, len).0, n);
    let r_hat = correlation_from(&covariance(reconstruction.data(), n, len).0, n);
    Ok(loss_from(&r, &r_hat))
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

/// Gradient of the loss with respect to the reconstruction rows, for
/// precomputed reference correlations. Returns the loss and the gradient.
fn loss_and_grad(r: &[f64], x: &[f64], n: usize, len: usize) -> (f64, Vec<f64>) {
    let (c, centred) = covariance(x, n, len);
    let r_hat = correlation_from(&c, n);
    let loss = loss_from(r, &r_hat);

    // ∂L/∂C_ab treating every entry of C as independent.
    let mut gc = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let g = 0.5 * sign(r_hat[i * n + j] - r[i * n + j]);
            if g == 0.0 {
                continue;
            }
            let (cii, cjj, cij) = (c[i * n + i], c[j * n + j], c[i * n + j]);
            let d = cii * cjj + COVARIANCE_EPS;
            let inv_sqrt = 1.0 / d.sqrt();
            gc[i * n + j] += g * inv_sqrt;
            let common = -0.5 * g * cij * inv_sqrt / d;
            gc[i * n + i] += common * cjj;
            gc[j * n + j] += common * cii;
        }
    }

    // C_ab = Σ_t c_a(t) c_b(t) / (L−1) ⇒ ∂/∂c_k(t) = Σ_j (G_kj + G_jk) c_j(t) / (L−1).
    let mut grad = vec![0.0; n * len];
    let scale = 1.0 / (len - 1) as f64;
    for k in 0..n {
        let out = &mut grad[k * len..(k + 1) * len];
        for j in 0..n {
            let w = (gc[k * n + j] + gc[j * n + k]) * scale;
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&centred[j * len..(j + 1) * len]) {
                *o += w * v;
            }
        }
        // Back through mean removal.
        let mean = out.iter().sum::<f64>() / len as f64;
        out.iter_mut().for_each(|v| *v -= mean);
    }
    (loss, grad)
}

/// Analytic subgradient with respect to the reconstruction; zero where an
/// entry already matches.
pub fn covariance_loss_backward(reference: &Tensor, reconstruction: &Tensor) -> Result<Tensor> {
    let (n, len) = check_pair(reference, reconstruction)?;
    let r = correlation_from(&covariance(reference.data(), n, len).0, n);
    let (_, grad) = loss_and_grad(&r, reconstruction.data(), n, len);
    Tensor::new(vec![n, len], grad)
}

impl Graph {
    /// Covariance loss of `[N × C × L]` against a constant reference,
    /// averaged over the batch.
    pub fn covariance_loss(&mut self, reconstruction: Var, reference: &Tensor) -> Result<Var> {
        let shape = self.shape(reconstruction).to_vec();
        if shape.len() != 3 || reference.shape() != shape.as_slice() || shape[2] < 2 {
            return Err(Error::Shape(format!(
                "covariance loss: reconstruction {:?} vs reference {:?}",
                shape,
                reference.shape()
            )));
        }
        let (batch, n, len) = (shape[0], shape[1], shape[2]);
        let xv = self.value(reconstruction).data();
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(batch * n * len);
        for b in 0..batch {
            let span = b * n * len..(b + 1) * n * len;
            let r = correlation_from(&covariance(&reference.data()[span.clone()], n, len).0, n);
            let (l, g) = loss_and_grad(&r, &xv[span], n, len);
            total += l;
            grad.extend(g);
        }
        let grad = Tensor::new(shape, grad)?;
        Ok(self.op(
            Tensor::scalar(total / batch as f64),
            &[reconstruction],
            Box::new(move |args| vec![Some(grad.scale(args.grad.item() / batch as f64))]),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(r: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn diagonal_is_one_and_anticorrelation() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let r = normalized_covariance(&rows(&[a, neg])).unwrap();
        assert_eq!(r.data()[0], 1.0);
        assert_eq!(r.data()[3], 1.0);
        assert!((r.data()[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn sign_flip_pair() {
        let a: Vec<f64> = (0..64).map(|i| (i as f64 * 0.7).cos()).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let l = covariance_loss(&rows(&[a.clone(), a.clone()]), &rows(&[a, neg])).unwrap();
        assert!((l - 2.0).abs() < 1e-6);
    }

    #[test]
    fn identical_pair_has_zero_loss_and_gradient() {
        let x = Tensor::randn(&[4, 30], 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(covariance_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(covariance_loss_backward(&x, &x).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn silent_channel_is_finite() {
        let x = rows(&[vec![0.0; 10], (0..10).map(|i| i as f64).collect()]);
        let r = normalized_covariance(&x).unwrap();
        assert!(r.all_finite());
        assert_eq!(r.data()[1], 0.0);
    }

    #[test]
    fn graph_op_matches_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reference = Tensor::randn(&[2, 3, 20], 1.0, &mut rng);
        let recon = Tensor::randn(&[2, 3, 20], 1.0, &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(recon.clone());
        let l = g.covariance_loss(x, &reference).unwrap();
        let grads = g.backward(l).unwrap();
        let mut expect = 0.0;
        for b in 0..2 {
            let (r, xb) = (reference.select(b), recon.select(b));
            expect += covariance_loss(&r, &xb).unwrap() / 2.0;
            let gb = covariance_loss_backward(&r, &xb).unwrap();
            let full = grads.get(x).unwrap();
            for (i, v) in gb.data().iter().enumerate() {
                assert!((full.data()[b * 60 + i] - v / 2.0).abs() < 1e-14);
            }
        }
        assert!((g.value(l).item() - expect).abs() < 1e-14);
    }
}
