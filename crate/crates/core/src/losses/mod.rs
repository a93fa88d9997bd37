//! Generator and discriminator objectives.

pub mod adversarial;
pub mod covariance;
pub mod mel;

pub use adversarial::{adversarial_and_feature_losses, AdversarialLosses, DiscValues};
pub use covariance::{covariance_loss, covariance_loss_backward, normalized_covariance, COVARIANCE_EPS};
pub use mel::{multiscale_mel_loss, LOG_EPS};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mel: f64,
    pub feature_matching: f64,
    pub adversarial: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub covariance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel: 15.0,
            feature_matching: 2.0,
            adversarial: 1.0,
            codebook: 1.0,
            commitment: 0.25,
            covariance: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("loss weight `{name}` must be finite and ≥ 0, got {w}")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("mel", self.mel),
            ("feature_matching", self.feature_matching),
            ("adversarial", self.adversarial),
            ("codebook", self.codebook),
            ("commitment", self.commitment),
            ("covariance", self.covariance),
        ]
    }
}

/// Unweighted generator loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub mel: f64,
    pub feature_matching: f64,
    pub adversarial: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub covariance: f64,
}

impl LossTerms {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        LossWeights {
            mel: self.mel,
            feature_matching: self.feature_matching,
            adversarial: self.adversarial,
            codebook: self.codebook,
            commitment: self.commitment,
            covariance: self.covariance,
        }
        .named()
    }

    /// Name of the first non-finite term.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.named().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

/// `Σ weight · term`.
pub fn composite_generator_loss(terms: &LossTerms, weights: &LossWeights) -> Result<f64> {
    if let Some(name) = terms.first_non_finite() {
        return Err(Error::NonFinite(format!("{name} loss")));
    }
    Ok(terms
        .named()
        .iter()
        .zip(weights.named())
        .map(|((_, t), (_, w))| t * w)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weighting() {
        let w = LossWeights::default();
        assert_eq!(composite_generator_loss(&LossTerms::default(), &w).unwrap(), 0.0);
        let mel = LossTerms { mel: 1.0, ..Default::default() };
        assert_eq!(composite_generator_loss(&mel, &w).unwrap(), 15.0);
        let cov = LossTerms { covariance: 2.0, ..Default::default() };
        assert_eq!(composite_generator_loss(&cov, &w).unwrap(), 2.0);
    }

    #[test]
    fn non_finite_term_is_named() {
        let t = LossTerms { commitment: f64::NAN, ..Default::default() };
        let err = composite_generator_loss(&t, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("commitment"));
        assert!(err.is_numeric());
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights { adversarial: -1.0, ..Default::default() };
        assert!(w.validate().is_err());
    }
}
