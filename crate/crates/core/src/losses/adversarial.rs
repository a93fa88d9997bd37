//! Least-squares adversarial objectives and feature matching.

use crate::discriminators::DiscOutput;
use crate::error::{Error, Result};
use crate::graph::{mse_value, Graph, Var};
use crate::tensor::Tensor;

/// Concrete discriminator outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscValues {
    pub logits: Tensor,
    pub features: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLosses {
    pub adv_g: f64,
    pub adv_d: f64,
    pub feature_matching: f64,
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel().max(1) as f64
}

/// `adv_d = mean_D [mean (D(real) − 1)² + mean D(fake)²]`,
/// `adv_g = mean_D mean (D(fake) − 1)²`, and feature matching as the mean
/// over discriminators of the mean over layers of the L1 distance.
pub fn adversarial_and_feature_losses(real: &[DiscValues], fake: &[DiscValues]) -> Result<AdversarialLosses> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Shape(format!(
            "discriminator outputs: {} real vs {} fake",
            real.len(),
            fake.len()
        )));
    }
    let (mut adv_g, mut adv_d, mut feat) = (0.0, 0.0, 0.0);
    for (r, f) in real.iter().zip(fake) {
        if r.logits.shape() != f.logits.shape()
            || r.features.len() != f.features.len()
            || r.features.is_empty()
            || r.features.iter().zip(&f.features).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape("real and fake discriminator outputs differ in structure".into()));
        }
        let ones = Tensor::full(r.logits.shape(), 1.0);
        let zeros = Tensor::zeros(r.logits.shape());
        adv_d += mse_value(&r.logits, &ones) + mse_value(&f.logits, &zeros);
        adv_g += mse_value(&f.logits, &ones);
        feat += r
            .features
            .iter()
            .zip(&f.features)
            .map(|(a, b)| mean_abs_diff(a, b))
            .sum::<f64>()
            / r.features.len() as f64;
    }
    let n = real.len() as f64;
    Ok(AdversarialLosses {
        adv_g: adv_g / n,
        adv_d: adv_d / n,
        feature_matching: feat / n,
    })
}

impl Graph {
    /// Discriminator objective on outputs recorded in this graph.
    pub fn adversarial_d_loss(&mut self, real: &[DiscOutput], fake: &[DiscOutput]) -> Var {
        let n = real.len() as f64;
        let mut terms = Vec::with_capacity(2 * real.len());
        for (r, f) in real.iter().zip(fake) {
            terms.push((self.mse_to_scalar(r.logits, 1.0), 1.0 / n));
            terms.push((self.mse_to_scalar(f.logits, 0.0), 1.0 / n));
        }
        self.weighted_sum(&terms)
    }

    /// Generator objective `mean_D mean (D(fake) − 1)²`.
    pub fn adversarial_g_loss(&mut self, fake: &[DiscOutput]) -> Var {
        let n = fake.len() as f64;
        let terms: Vec<(Var, f64)> = fake
            .iter()
            .map(|f| (self.mse_to_scalar(f.logits, 1.0), 1.0 / n))
            .collect();
        self.weighted_sum(&terms)
    }

    /// Feature matching against constant real-audio features.
    pub fn feature_matching_loss(&mut self, real: &[DiscValues], fake: &[DiscOutput]) -> Var {
        let n = fake.len() as f64;
        let mut terms = Vec::new();
        for (r, f) in real.iter().zip(fake) {
            let layers = f.features.len() as f64;
            for (rt, &fv) in r.features.iter().zip(&f.features) {
                terms.push((self.l1_to(fv, rt), 1.0 / (n * layers)));
            }
        }
        self.weighted_sum(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(logit: f64) -> DiscValues {
        DiscValues {
            logits: Tensor::full(&[1, 2, 5], logit),
            features: vec![Tensor::full(&[1, 2, 3, 7], logit), Tensor::full(&[1, 2, 4, 5], 0.5)],
        }
    }

    #[test]
    fn optimum_and_constant_half() {
        let l = adversarial_and_feature_losses(&[constant(1.0)], &[constant(0.0)]).unwrap();
        assert_eq!(l.adv_d, 0.0);
        assert_eq!(l.adv_g, 1.0);
        let l = adversarial_and_feature_losses(&[constant(0.5)], &[constant(0.5)]).unwrap();
        assert!((l.adv_d - 0.5).abs() < 1e-15);
        assert_eq!(l.feature_matching, 0.0);
    }

    #[test]
    fn structure_mismatch() {
        let mut f = constant(0.0);
        f.features.pop();
        assert!(adversarial_and_feature_losses(&[constant(1.0)], &[f]).is_err());
        assert!(adversarial_and_feature_losses(&[constant(1.0)], &[]).is_err());
    }
}
