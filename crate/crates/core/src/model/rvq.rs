//! Residual vector quantization.
//!
//! Stage `i` replaces the running residual with its nearest codebook entry
//! (squared Euclidean distance, lowest index on ties) and passes the
//! remainder to stage `i + 1`. The quantized latent is the sum of the stage
//! outputs. Gradients flow straight through each stage: stage outputs are
//! `residual + sg(entry − residual)`, so the decoder's gradient reaches the
//! encoder unchanged while codebooks learn only from the codebook loss.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Bound, Graph, ParamSet, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualVq {
    pub n_codebooks: usize,
    pub codebook_size: usize,
    pub dim: usize,
}

/// Code indices for one example, `[n_codebooks × frames]` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codes {
    pub n_codebooks: usize,
    pub frames: usize,
    pub indices: Vec<u32>,
}

impl Codes {
    pub fn get(&self, codebook: usize, frame: usize) -> u32 {
        self.indices[codebook * self.frames + frame]
    }

    pub fn codebook(&self, codebook: usize) -> &[u32] {
        &self.indices[codebook * self.frames..(codebook + 1) * self.frames]
    }
}

/// Codes and straight-through offsets of a previous forward pass. Replaying
/// them makes the quantizer a smooth function of its inputs, which is what
/// finite-difference checks of the straight-through path need.
#[derive(Debug, Clone)]
pub struct FrozenQuantization {
    /// Per stage, one index per `(example, frame)`.
    stage_codes: Vec<Vec<usize>>,
    /// Per stage, `entry − residual` as observed when frozen.
    offsets: Vec<Tensor>,
}

pub struct RvqOutput {
    pub quantized: Var,
    pub codes: Vec<Codes>,
    pub codebook_loss: Var,
    pub commitment_loss: Var,
    pub frozen: FrozenQuantization,
}

impl ResidualVq {
    pub fn codebook_name(i: usize) -> String {
        format!("rvq.codebook.{i}")
    }

    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        for i in 0..self.n_codebooks {
            params.insert(
                Self::codebook_name(i),
                Tensor::randn(&[self.codebook_size, self.dim], 1.0, rng),
            );
        }
    }

    /// Quantizes `latent: [N × dim × T]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        latent: Var,
        frozen: Option<&FrozenQuantization>,
    ) -> Result<RvqOutput> {
        let shape = g.shape(latent).to_vec();
        if shape.len() != 3 || shape[1] != self.dim {
            return Err(Error::Shape(format!(
                "quantizer expects [N × {} × T], got {shape:?}",
                self.dim
            )));
        }
        let (batch, frames) = (shape[0], shape[2]);
        let mut residual = latent;
        let mut quantized: Option<Var> = None;
        let mut cb_terms = Vec::with_capacity(self.n_codebooks);
        let mut commit_terms = Vec::with_capacity(self.n_codebooks);
        let mut stage_codes = Vec::with_capacity(self.n_codebooks);
        let mut offsets = Vec::with_capacity(self.n_codebooks);

        for stage in 0..self.n_codebooks {
            let codebook = bound.get(&Self::codebook_name(stage));
            let codes = match frozen {
                Some(f) => f.stage_codes[stage].clone(),
                None => nearest_codes(g.value(residual), g.value(codebook)),
            };
            let entry = g.gather(codebook, Arc::new(self.lookup_indices(&codes, batch, frames)), shape.clone());
            let offset = match frozen {
                Some(f) => f.offsets[stage].clone(),
                None => g.value(entry).zip_map(g.value(residual), |e, r| e - r),
            };
            let r_value = g.value(residual).clone();
            let e_value = g.value(entry).clone();
            commit_terms.push((g.mse_to(residual, &e_value), 1.0));
            cb_terms.push((g.mse_to(entry, &r_value), 1.0));

            let stage_out = g.add_constant(residual, &offset);
            quantized = Some(match quantized {
                Some(q) => g.add(q, stage_out),
                None => stage_out,
            });
            residual = g.sub(residual, stage_out);
            stage_codes.push(codes);
            offsets.push(offset);
        }

        let codes = (0..batch)
            .map(|n| Codes {
                n_codebooks: self.n_codebooks,
                frames,
                indices: stage_codes
                    .iter()
                    .flat_map(|c| c[n * frames..(n + 1) * frames].iter().map(|&i| i as u32))
                    .collect(),
            })
            .collect();
        let codebook_loss = g.weighted_sum(&cb_terms);
        let commitment_loss = g.weighted_sum(&commit_terms);
        Ok(RvqOutput {
            quantized: quantized.expect("at least one codebook"),
            codes,
            codebook_loss,
            commitment_loss,
            frozen: FrozenQuantization { stage_codes, offsets },
        })
    }

    /// Flat source indices mapping `[size × dim]` entries onto `[N × dim × T]`.
    fn lookup_indices(&self, codes: &[usize], batch: usize, frames: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(batch * self.dim * frames);
        for n in 0..batch {
            for d in 0..self.dim {
                idx.extend((0..frames).map(|t| codes[n * frames + t] * self.dim + d));
            }
        }
        idx
    }

    /// Sum of the selected entries, `[dim × T]`.
    pub fn dequantize(&self, params: &ParamSet, codes: &Codes) -> Result<Tensor> {
        if codes.n_codebooks > self.n_codebooks {
            return Err(Error::Shape(format!(
                "{} codebooks in stream, quantizer has {}",
                codes.n_codebooks, self.n_codebooks
            )));
        }
        let mut out = Tensor::zeros(&[self.dim, codes.frames]);
        for stage in 0..codes.n_codebooks {
            let cb = params.get(&Self::codebook_name(stage))?;
            for t in 0..codes.frames {
                let k = codes.get(stage, t) as usize;
                if k >= self.codebook_size {
                    return Err(Error::Shape(format!("code {k} out of range")));
                }
                let entry = cb.row(k);
                for d in 0..self.dim {
                    out.data_mut()[d * codes.frames + t] += entry[d];
                }
            }
        }
        Ok(out)
    }
}

/// Index of the nearest codebook row for every `(example, frame)` column of
/// `residual: [N × dim × T]`.
pub fn nearest_codes(residual: &Tensor, codebook: &Tensor) -> Vec<usize> {
    let (batch, dim, frames) = (residual.dim(0), residual.dim(1), residual.dim(2));
    let size = codebook.dim(0);
    let r = residual.data();
    let cb = codebook.data();
    let mut out = Vec::with_capacity(batch * frames);
    let mut column = vec![0.0; dim];
    for n in 0..batch {
        for t in 0..frames {
            for (d, c) in column.iter_mut().enumerate() {
                *c = r[(n * dim + d) * frames + t];
            }
            let mut best = (f64::INFINITY, 0);
            for k in 0..size {
                let entry = &cb[k * dim..(k + 1) * dim];
                let dist: f64 = column.iter().zip(entry).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            out.push(best.1);
        }
    }
    out
}

/// Result of [`rvq_quantize`] on concrete values.
#[derive(Debug, Clone)]
pub struct Quantized {
    pub codes: Codes,
    /// `[dim × T]`
    pub quantized: Tensor,
    pub codebook_loss: f64,
    pub commitment_loss: f64,
}

/// Quantizes a single `[dim × T]` latent without tracking gradients.
pub fn rvq_quantize(rvq: &ResidualVq, params: &ParamSet, latents: &Tensor) -> Result<Quantized> {
    if latents.rank() != 2 {
        return Err(Error::Shape(format!("expected [dim × T], got {:?}", latents.shape())));
    }
    let mut g = Graph::new();
    let bound = g.bind(params, false);
    let frames = latents.dim(1);
    let x = g.constant(latents.clone().reshape(vec![1, latents.dim(0), frames])?);
    let out = rvq.forward(&mut g, &bound, x, None)?;
    Ok(Quantized {
        codes: out.codes.into_iter().next().unwrap(),
        quantized: g.value(out.quantized).clone().reshape(vec![rvq.dim, frames])?,
        codebook_loss: g.value(out.codebook_loss).item(),
        commitment_loss: g.value(out.commitment_loss).item(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n_codebooks: usize, size: usize, dim: usize, seed: u64) -> (ResidualVq, ParamSet) {
        let rvq = ResidualVq {
            n_codebooks,
            codebook_size: size,
            dim,
        };
        let mut params = ParamSet::new();
        rvq.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        (rvq, params)
    }

    #[test]
    fn exact_entry_gives_its_code_and_zero_loss() {
        let (rvq, params) = setup(1, 8, 3, 1);
        let cb = params.get(&ResidualVq::codebook_name(0)).unwrap();
        let entry = cb.row(5).to_vec();
        let latent = Tensor::new(vec![3, 1], entry).unwrap();
        let q = rvq_quantize(&rvq, &params, &latent).unwrap();
        assert_eq!(q.codes.indices, vec![5]);
        assert_eq!(q.codebook_loss, 0.0);
        assert_eq!(q.commitment_loss, 0.0);
        assert_eq!(q.quantized, latent);
    }

    #[test]
    fn single_stage_matches_exhaustive_search() {
        let (rvq, params) = setup(1, 16, 4, 2);
        let cb = params.get(&ResidualVq::codebook_name(0)).unwrap().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let latent = Tensor::randn(&[4, 50], 1.0, &mut rng);
        let q = rvq_quantize(&rvq, &params, &latent).unwrap();
        for t in 0..50 {
            let col: Vec<f64> = (0..4).map(|d| latent.data()[d * 50 + t]).collect();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..16 {
                let d: f64 = col.iter().zip(cb.row(k)).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            assert_eq!(q.codes.get(0, t) as usize, best);
        }
    }

    #[test]
    fn residual_energy_never_grows() {
        for trial in 0..100u64 {
            // Greedy stages can only promise not to overshoot when the
            // origin is among the candidates, as it effectively is for a
            // trained quantizer whose later stages shrink.
            let (rvq, mut params) = setup(4, 8, 3, 100 + trial);
            for stage in 0..4 {
                let cb = params.get_mut(&ResidualVq::codebook_name(stage)).unwrap();
                cb.row_mut(0).fill(0.0);
                *cb = cb.scale(0.5f64.powi(stage as i32));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let latent = Tensor::randn(&[3, 6], 1.5, &mut rng);
            let q = rvq_quantize(&rvq, &params, &latent).unwrap();
            let mut residual = latent.clone();
            let mut prev = residual.sq_norm();
            for stage in 0..4 {
                let cb = params.get(&ResidualVq::codebook_name(stage)).unwrap();
                for t in 0..6 {
                    let k = q.codes.get(stage, t) as usize;
                    for d in 0..3 {
                        residual.data_mut()[d * 6 + t] -= cb.row(k)[d];
                    }
                }
                let e = residual.sq_norm();
                assert!(e <= prev + 1e-12, "trial {trial} stage {stage}: {e} > {prev}");
                prev = e;
            }
        }
    }

    #[test]
    fn dequantize_matches_forward_value() {
        let (rvq, params) = setup(3, 8, 2, 4);
        let latent = Tensor::randn(&[2, 7], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let q = rvq_quantize(&rvq, &params, &latent).unwrap();
        let deq = rvq.dequantize(&params, &q.codes).unwrap();
        for (a, b) in deq.data().iter().zip(q.quantized.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_through_gradient_is_identity() {
        let (rvq, params) = setup(2, 4, 2, 6);
        let mut g = Graph::new();
        let bound = g.bind(&params, true);
        let latent = g.leaf(Tensor::randn(&[1, 2, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(7)));
        let out = rvq.forward(&mut g, &bound, latent, None).unwrap();
        let loss = g.sum(out.quantized);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(latent).unwrap().data().iter().all(|&v| v == 1.0));
        // Codebooks receive nothing through the straight-through path.
        let by_name = grads.by_name(&bound, &g);
        assert!(by_name.values().all(|t| t.max_abs() == 0.0));
    }
}
