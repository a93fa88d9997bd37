//! One alternating discriminator / generator update.

use std::collections::BTreeMap;

use crate::discriminators::DiscriminatorSuite;
use crate::dsp::SpectrogramConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamSet, Var};
use crate::losses::{LossTerms, LossWeights};
use crate::model::GeneratorModel;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::optim::{clip_grad_norm, AdamW};

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// Unweighted generator terms. Terms that were not evaluated are 0.
    pub terms: LossTerms,
    pub generator_loss: f64,
    /// `None` when the adversarial and feature-matching weights are both 0
    /// and the discriminators are skipped.
    pub discriminator_loss: Option<f64>,
    /// Gradient norms before clipping.
    pub generator_grad_norm: f64,
    pub discriminator_grad_norm: Option<f64>,
}

/// Models, parameters and optimizer state of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub generator: GeneratorModel,
    pub gen_params: ParamSet,
    pub discriminators: DiscriminatorSuite,
    pub disc_params: ParamSet,
    pub gen_opt: AdamW,
    pub disc_opt: AdamW,
    pub weights: LossWeights,
    pub scales: Vec<SpectrogramConfig>,
    pub grad_clip: f64,
    pub covariance_loss_start_step: usize,
    /// Number of completed updates.
    pub step: usize,
}

fn check_term(g: &Graph, v: Var, term: &str, step: usize) -> Result<f64> {
    let x = g.value(v).item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteLoss {
            term: term.to_string(),
            step,
        })
    }
}

impl TrainState {
    pub fn new(
        config: &TrainConfig,
        generator: GeneratorModel,
        gen_params: ParamSet,
        discriminators: DiscriminatorSuite,
        disc_params: ParamSet,
        scales: Vec<SpectrogramConfig>,
    ) -> Self {
        let opt = |lr| AdamW::new(lr, config.beta1, config.beta2, config.weight_decay, config.lr_decay);
        Self {
            generator,
            gen_params,
            discriminators,
            disc_params,
            gen_opt: opt(config.lr_generator),
            disc_opt: opt(config.lr_discriminator),
            weights: config.weights,
            scales,
            grad_clip: config.grad_clip,
            covariance_loss_start_step: config.covariance_loss_start_step,
            step: 0,
        }
    }

    pub fn uses_discriminators(&self) -> bool {
        self.weights.adversarial > 0.0 || self.weights.feature_matching > 0.0
    }

    fn covariance_active(&self) -> bool {
        self.weights.covariance > 0.0
            && self.step >= self.covariance_loss_start_step
            && self.generator.config().io_channels > 1
    }

    /// Discriminator update on the batch and a detached reconstruction.
    fn discriminator_step(&mut self, real: &Tensor, fake: &Tensor) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let b = g.bind(&self.disc_params, true);
        let real_v = g.constant(real.clone());
        let fake_v = g.constant(fake.clone());
        let ro = self.discriminators.discriminate(&mut g, &b, real_v)?;
        let fo = self.discriminators.discriminate(&mut g, &b, fake_v)?;
        let loss = g.adversarial_d_loss(&ro, &fo);
        let value = check_term(&g, loss, "discriminator", self.step)?;
        let mut grads = g.backward(loss)?.by_name(&b, &g);
        let norm = clip_grad_norm(&mut grads, self.grad_clip);
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "discriminator gradient".into(),
                step: self.step,
            });
        }
        self.disc_opt.step(&mut self.disc_params, &grads)?;
        Ok((value, norm))
    }

    /// One discriminator update followed by one generator update on
    /// `batch` (`[B × C × L]`).
    pub fn train_step(&mut self, batch: &Tensor) -> Result<StepReport> {
        if !batch.all_finite() {
            return Err(Error::NonFinite("training batch".into()));
        }
        let step = self.step;
        let w = self.weights;
        let mut g = Graph::new();
        let gb = g.bind(&self.gen_params, true);
        let x = g.constant(batch.clone());
        let out = self.generator.forward(&mut g, &gb, x, None)?;
        let recon = out.reconstruction;

        let (mut d_loss, mut d_norm) = (None, None);
        let mut terms = LossTerms::default();
        let mut objective: Vec<(Var, f64)> = Vec::new();

        let mel = g.multiscale_mel_loss(recon, batch, &self.scales)?;
        terms.mel = check_term(&g, mel, "mel", step)?;
        objective.push((mel, w.mel));
        terms.codebook = check_term(&g, out.codebook_loss, "codebook", step)?;
        objective.push((out.codebook_loss, w.codebook));
        terms.commitment = check_term(&g, out.commitment_loss, "commitment", step)?;
        objective.push((out.commitment_loss, w.commitment));
        if self.covariance_active() {
            let cov = g.covariance_loss(recon, batch)?;
            terms.covariance = check_term(&g, cov, "covariance", step)?;
            objective.push((cov, w.covariance));
        }

        if self.uses_discriminators() {
            let fake = g.value(recon).clone();
            let (dl, dn) = self.discriminator_step(batch, &fake)?;
            d_loss = Some(dl);
            d_norm = Some(dn);
            let db = g.bind(&self.disc_params, false);
            let fo = self.discriminators.discriminate(&mut g, &db, recon)?;
            let adv = g.adversarial_g_loss(&fo);
            terms.adversarial = check_term(&g, adv, "adversarial", step)?;
            objective.push((adv, w.adversarial));
            let real = self.discriminators.discriminate_values(&self.disc_params, batch)?;
            let fm = g.feature_matching_loss(&real, &fo);
            terms.feature_matching = check_term(&g, fm, "feature_matching", step)?;
            objective.push((fm, w.feature_matching));
        }

        // Zero-weight terms stay out of the graph so they contribute exactly
        // nothing to the gradient.
        objective.retain(|&(_, weight)| weight > 0.0);
        let total = g.weighted_sum(&objective);
        let generator_loss = check_term(&g, total, "generator", step)?;
        let mut grads: BTreeMap<String, Tensor> = g.backward(total)?.by_name(&gb, &g);
        let norm = clip_grad_norm(&mut grads, self.grad_clip);
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "generator gradient".into(),
                step,
            });
        }
        self.gen_opt.step(&mut self.gen_params, &grads)?;
        self.step += 1;
        Ok(StepReport {
            step,
            terms,
            generator_loss,
            discriminator_loss: d_loss,
            generator_grad_norm: norm,
            discriminator_grad_norm: d_norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambisonics::AmbisonicsOrder;
    use crate::trainer::{init_state, Init, TrainingData};

    fn data() -> TrainingData {
        TrainingData::synthetic(2, 8, AmbisonicsOrder::new(1), 44_100, 256, 11).unwrap()
    }

    fn config(adversarial: bool) -> TrainConfig {
        let mut c = TrainConfig {
            excerpt_seconds: 256.0 / 44_100.0,
            batch_size: 2,
            mel_max_window: 128,
            seed: 4,
            ..TrainConfig::default()
        };
        if !adversarial {
            c.weights.adversarial = 0.0;
            c.weights.feature_matching = 0.0;
        }
        c
    }

    fn batch(d: &TrainingData) -> Tensor {
        Tensor::stack(&d.train[..2]).unwrap()
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let d = data();
        let run = || {
            let mut s = init_state(&config(true), &d, &Init::Random).unwrap();
            for i in 0..10 {
                s.train_step(&Tensor::stack(&d.train[i % 4..i % 4 + 2]).unwrap()).unwrap();
            }
            (s.gen_params, s.disc_params)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradient_norms_are_finite_and_nonzero() {
        let d = data();
        let mut s = init_state(&config(true), &d, &Init::Random).unwrap();
        let r = s.train_step(&batch(&d)).unwrap();
        assert!(r.generator_grad_norm.is_finite() && r.generator_grad_norm > 0.0);
        let dn = r.discriminator_grad_norm.unwrap();
        assert!(dn.is_finite() && dn > 0.0);
        assert!(r.discriminator_loss.unwrap().is_finite());
        assert!(r.terms.adversarial > 0.0 && r.terms.feature_matching > 0.0);
    }

    #[test]
    fn mel_loss_does_not_increase_on_a_repeated_batch() {
        let d = data();
        let mut c = config(false);
        c.lr_generator = 1e-6;
        c.weight_decay = 0.0;
        let mut s = init_state(&c, &d, &Init::Random).unwrap();
        let b = batch(&d);
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            let mel = s.train_step(&b).unwrap().terms.mel;
            assert!(mel <= prev, "step {step}: {mel} > {prev}");
            prev = mel;
        }
    }

    #[test]
    fn updates_touch_only_their_own_model() {
        let d = data();
        let mut s = init_state(&config(true), &d, &Init::Random).unwrap();
        let (g0, d0) = (s.gen_params.clone(), s.disc_params.clone());
        let fake = s
            .generator
            .reconstruct(&s.gen_params, &d.train[0])
            .unwrap()
            .0
            .reshape(vec![1, 4, 256])
            .unwrap();
        let real = d.train[1].clone().reshape(vec![1, 4, 256]).unwrap();
        s.discriminator_step(&real, &fake).unwrap();
        assert_eq!(s.gen_params, g0);
        assert_ne!(s.disc_params, d0);

        // Without discriminator terms a generator step leaves them alone.
        let mut s = init_state(&config(false), &d, &Init::Random).unwrap();
        let d0 = s.disc_params.clone();
        s.train_step(&batch(&d)).unwrap();
        assert_eq!(s.disc_params, d0);
        assert_ne!(s.gen_params, g0);
    }

    /// Parameter change after one step with only `term` weighted.
    fn delta_with(term: &str, weight: f64) -> ParamSet {
        let d = data();
        let mut c = config(true);
        c.weights = LossWeights {
            mel: 0.0,
            feature_matching: 0.0,
            adversarial: 0.0,
            codebook: 0.0,
            commitment: 0.0,
            covariance: 0.0,
        };
        c.set(&format!("weight_{term}"), &weight.to_string()).unwrap();
        c.weight_decay = 0.0;
        let mut s = init_state(&c, &d, &Init::Random).unwrap();
        let before = s.gen_params.clone();
        s.train_step(&batch(&d)).unwrap();
        let mut delta = ParamSet::new();
        for (name, t) in s.gen_params.iter() {
            let b = before.get(name).unwrap();
            delta.insert(name.clone(), t.zip_map(b, |x, y| x - y));
        }
        delta
    }

    #[test]
    fn zero_weights_contribute_nothing() {
        for term in ["mel", "covariance", "codebook", "commitment", "adversarial"] {
            let zero = delta_with(term, 0.0);
            assert!(zero.iter().all(|(_, t)| t.max_abs() == 0.0), "{term} with weight 0 moved parameters");
            let on = delta_with(term, 1.0);
            assert!(on.iter().any(|(_, t)| t.max_abs() > 0.0), "{term} with weight 1 moved nothing");
        }
    }

    #[test]
    fn covariance_waits_for_its_start_step() {
        let d = data();
        let mut c = config(false);
        c.covariance_loss_start_step = 2;
        let mut s = init_state(&c, &d, &Init::Random).unwrap();
        let b = batch(&d);
        assert_eq!(s.train_step(&b).unwrap().terms.covariance, 0.0);
        assert_eq!(s.train_step(&b).unwrap().terms.covariance, 0.0);
        assert!(s.train_step(&b).unwrap().terms.covariance > 0.0);
    }

    #[test]
    fn non_finite_loss_names_term_and_step() {
        let d = data();
        let mut s = init_state(&config(false), &d, &Init::Random).unwrap();
        let b = batch(&d);
        s.train_step(&b).unwrap();
        for (_, t) in s.gen_params.iter_mut().filter(|(n, _)| n.starts_with("dec.out.weight")) {
            t.data_mut()[0] = f64::INFINITY;
        }
        match s.train_step(&b) {
            Err(e) => {
                assert!(e.is_numeric(), "{e}");
                assert!(e.to_string().contains("step 1") || e.to_string().contains("decoder"), "{e}");
            }
            Ok(_) => panic!("an infinite weight trained without error"),
        }
        let mut bad = b.clone();
        bad.data_mut()[5] = f64::NAN;
        assert!(s.train_step(&bad).unwrap_err().is_numeric());
    }
}
