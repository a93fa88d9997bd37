//! Adam with decoupled weight decay and exponential learning-rate decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::ParamSet;
use crate::tensor::Tensor;

const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    steps: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64, lr_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            weight_decay,
            lr_decay,
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Learning rate used by the next update.
    pub fn current_lr(&self) -> f64 {
        self.lr * self.lr_decay.powf(self.steps as f64)
    }

    /// One update. Every parameter must have a gradient of its own shape.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        let lr = self.current_lr();
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("no gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!("gradient shape mismatch for `{name}`")));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let shrink = 1.0 - lr * self.weight_decay;
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *pi = *pi * shrink - lr * (*mi / c1) / ((*vi / c2).sqrt() + EPS);
            }
        }
        Ok(())
    }
}

/// Global L2 norm.
pub fn grad_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping. `max_norm = 0` disables clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> (ParamSet, BTreeMap<String, Tensor>) {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::full(&[1], v));
        (p, BTreeMap::new())
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction the first Adam step is lr·g/(|g|+ε).
        let (mut p, mut g) = single(1.0);
        g.insert("w".into(), Tensor::full(&[1], 3.0));
        let mut opt = AdamW::new(0.1, 0.8, 0.99, 0.0, 1.0);
        opt.step(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().item();
        assert!((w - (1.0 - 0.1 * 3.0 / (3.0 + EPS))).abs() < 1e-15);
    }

    #[test]
    fn decay_is_decoupled() {
        let (mut p, mut g) = single(2.0);
        g.insert("w".into(), Tensor::zeros(&[1]));
        let mut opt = AdamW::new(0.1, 0.8, 0.99, 0.5, 1.0);
        opt.step(&mut p, &g).unwrap();
        assert!((p.get("w").unwrap().item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn matches_reference_recurrence() {
        let (mut p, mut g) = single(0.3);
        let mut opt = AdamW::new(0.01, 0.8, 0.99, 0.01, 0.9);
        let (mut w, mut m, mut v) = (0.3f64, 0.0, 0.0);
        for t in 1..=20 {
            let grad = (t as f64 * 0.7).sin();
            g.insert("w".into(), Tensor::full(&[1], grad));
            opt.step(&mut p, &g).unwrap();
            let lr = 0.01 * 0.9f64.powi(t - 1);
            m = 0.8 * m + 0.2 * grad;
            v = 0.99 * v + 0.01 * grad * grad;
            let mh = m / (1.0 - 0.8f64.powi(t));
            let vh = v / (1.0 - 0.99f64.powi(t));
            w = w * (1.0 - lr * 0.01) - lr * mh / (vh.sqrt() + EPS);
        }
        assert!((p.get("w").unwrap().item() - w).abs() < 1e-14);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let (mut p, mut g) = single(5.0);
        let mut opt = AdamW::new(0.05, 0.8, 0.99, 0.0, 1.0);
        for _ in 0..500 {
            let w = p.get("w").unwrap().item();
            g.insert("w".into(), Tensor::full(&[1], 2.0 * (w - 1.5)));
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p.get("w").unwrap().item() - 1.5).abs() < 1e-2);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::full(&[2], 3.0));
        g.insert("b".to_string(), Tensor::full(&[1], 4.0));
        let before = clip_grad_norm(&mut g, 1.0);
        assert!((before - 34f64.sqrt()).abs() < 1e-12);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-12);
        let mut h = g.clone();
        clip_grad_norm(&mut h, 0.0);
        assert_eq!(h, g);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut p, g) = single(1.0);
        assert!(AdamW::new(0.1, 0.8, 0.99, 0.0, 1.0).step(&mut p, &g).is_err());
    }
}
