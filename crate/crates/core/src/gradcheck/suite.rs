//! Finite-difference checks of every differentiable building block on
//! random small instances.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradient, sample_coordinates, GradCheckOptions, GradCheckReport};
use crate::discriminators::{DiscriminatorSuite, DiscriminatorSuiteConfig};
use crate::dsp::SpectrogramConfig;
use crate::error::Result;
use crate::graph::{Graph, ParamSet, Var};
use crate::model::{ConvGeometry, ResidualVq, TransposedGeometry};
use crate::tensor::Tensor;

fn randn<R: Rng>(shape: &[usize], r: &mut R) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

/// Builds a scalar loss from leaves it creates for `inputs`.
type Build<'a> = dyn Fn(&mut Graph, &[Tensor]) -> Result<(Var, Vec<Var>)> + 'a;

/// Checks every input of one instance, probing at most `probes` coordinates
/// per input.
fn check_instance<R: Rng>(
    build: &Build,
    inputs: &[Tensor],
    probes: usize,
    tolerance: f64,
    r: &mut R,
) -> Result<Vec<GradCheckReport>> {
    let mut g = Graph::new();
    let (loss, vars) = build(&mut g, inputs)?;
    let grads = g.backward(loss)?;
    let mut out = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let fraction = (probes as f64 / x.numel() as f64).min(1.0);
        let opts = GradCheckOptions {
            tolerance,
            indices: Some(sample_coordinates(x.numel(), fraction, r)),
            ..GradCheckOptions::default()
        };
        let f = |xi: &Tensor| -> Result<f64> {
            let mut all = inputs.to_vec();
            all[i] = xi.clone();
            let mut g = Graph::new();
            let (l, _) = build(&mut g, &all)?;
            Ok(g.value(l).item())
        };
        out.push(check_gradient(f, x, &analytic, &opts)?);
    }
    Ok(out)
}

/// Outcome of one family of checks.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySummary {
    pub name: &'static str,
    pub instances: usize,
    /// Instances with a probe over tolerance, no usable probe, or an error.
    pub failed: usize,
    pub checked: usize,
    /// Probes skipped because a kink lies inside the stencil.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub errors: Vec<String>,
}

impl FamilySummary {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            instances: 0,
            failed: 0,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            errors: Vec::new(),
        }
    }

    fn add(&mut self, reports: Result<Vec<GradCheckReport>>) {
        self.instances += 1;
        match reports {
            Ok(reports) => {
                let ok = reports.iter().all(|r| r.max_rel_error() <= r.tolerance);
                let checked: usize = reports.iter().map(GradCheckReport::checked).sum();
                if !ok || checked == 0 {
                    self.failed += 1;
                }
                self.checked += checked;
                self.skipped += reports.iter().map(GradCheckReport::skipped).sum::<usize>();
                self.max_rel_error = reports
                    .iter()
                    .map(GradCheckReport::max_rel_error)
                    .fold(self.max_rel_error, f64::max);
            }
            Err(e) => {
                self.errors.push(e.to_string());
                self.failed += 1;
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.instances > 0 && self.failed == 0
    }
}

/// Instances per family, relative tolerance and probes per tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub instances: usize,
    pub tolerance: f64,
    pub probes: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            tolerance: 1e-4,
            probes: 24,
            seed: 0,
        }
    }
}

/// `Σ y ⊙ w` for a fixed random `w`, so every output coordinate matters.
fn project(g: &mut Graph, y: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone());
    let p = g.mul(y, w);
    g.sum(p)
}

fn family_conv(o: &SuiteOptions, r: &mut ChaCha8Rng) -> FamilySummary {
    let mut fam = FamilySummary::new("conv");
    while fam.instances < o.instances {
        let (n, c_in, c_out, k) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=7));
        let len = r.random_range(4..=24);
        let geo = ConvGeometry {
            stride: r.random_range(1..=3),
            dilation: r.random_range(1..=3),
            padding: r.random_range(0..=3),
        };
        let Some(len_out) = geo.output_len(len, k) else { continue };
        let proj = randn(&[n, c_out, len_out], r);
        let inputs = [randn(&[n, c_in, len], r), randn(&[c_out, c_in, k], r), randn(&[c_out], r)];
        let build = move |g: &mut Graph, t: &[Tensor]| {
            let v: Vec<Var> = t.iter().map(|x| g.leaf(x.clone())).collect();
            let y = g.conv1d(v[0], v[1], Some(v[2]), geo);
            Ok((project(g, y, &proj), v))
        };
        fam.add(check_instance(&build, &inputs, o.probes, o.tolerance, r));
    }
    fam
}

fn family_conv_transpose(o: &SuiteOptions, r: &mut ChaCha8Rng) -> FamilySummary {
    let mut fam = FamilySummary::new("transposed conv");
    while fam.instances < o.instances {
        let (n, c_in, c_out, k) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=8));
        let len = r.random_range(2..=12);
        let stride = r.random_range(1..=4);
        let geo = TransposedGeometry {
            stride,
            dilation: r.random_range(1..=2),
            padding: r.random_range(0..=2),
            output_padding: r.random_range(0..stride),
        };
        let Some(len_out) = geo.output_len(len, k) else { continue };
        let proj = randn(&[n, c_out, len_out], r);
        let inputs = [randn(&[n, c_in, len], r), randn(&[c_in, c_out, k], r), randn(&[c_out], r)];
        let build = move |g: &mut Graph, t: &[Tensor]| {
            let v: Vec<Var> = t.iter().map(|x| g.leaf(x.clone())).collect();
            let y = g.conv_transpose1d(v[0], v[1], Some(v[2]), geo);
            Ok((project(g, y, &proj), v))
        };
        fam.add(check_instance(&build, &inputs, o.probes, o.tolerance, r));
    }
    fam
}

fn family_snake(o: &SuiteOptions, r: &mut ChaCha8Rng) -> FamilySummary {
    let mut fam = FamilySummary::new("snake");
    for _ in 0..o.instances {
        let (n, c, len) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(2..=16));
        let alpha = Tensor::new(vec![c], (0..c).map(|_| r.random_range(0.2..2.5)).collect()).unwrap();
        let proj = randn(&[n, c, len], r);
        let inputs = [randn(&[n, c, len], r).scale(2.0), alpha];
        let build = move |g: &mut Graph, t: &[Tensor]| {
            let v: Vec<Var> = t.iter().map(|x| g.leaf(x.clone())).collect();
            let y = g.snake(v[0], v[1]);
            Ok((project(g, y, &proj), v))
        };
        fam.add(check_instance(&build, &inputs, o.probes, o.tolerance, r));
    }
    fam
}

fn family_leaky_relu(o: &SuiteOptions, r: &mut ChaCha8Rng) -> FamilySummary {
    let mut fam = FamilySummary::new("leaky relu");
    for _ in 0..o.instances {
        let shape = [r.random_range(1..=2), r.random_range(1..=4), r.random_range(2..=16)];
        let proj = randn(&shape, r);
        let slope = r.random_range(0.01..0.3);
        let inputs = [randn(&shape, r)];
        let build = move |g: &mut Graph, t: &[Tensor]| {
            let x = g.leaf(t[0].clone());
            let y = g.leaky_relu(x, slope);
            Ok((project(g, y, &proj), vec![x]))
        };
        fam.add(check_instance(&build, &inputs, o.probes, o.tolerance, r));
    }
    fam
}

/// The quantizer with its codes and straight-through offsets replayed from
/// the unperturbed point. The latent is checked through the identity path
/// and the commitment term, the codebooks through the codebook term; each
/// term's stop-gradient side is excluded from the other check.
fn family_rvq(o: &SuiteOptions, r: &mut ChaCha8Rng) -> FamilySummary {
    let mut fam = FamilySummary::new("rvq straight-through");
    for _ in 0..o.instances {
        let rvq = ResidualVq {
            n_codebooks: r.random_range(1..=3),
            codebook_size: r.random_range(2..=8),
            dim: r.random_range(1..=4),
        };
        let (n, frames) = (r.random_range(1..=2), r.random_range(1..=6));
        let mut params = ParamSet::new();
        rvq.init_params(&mut params, r);
        let latent = randn(&[n, rvq.dim, frames], r);
        let proj = randn(&[n, rvq.dim, frames], r);
        let frozen = {
            let mut g = Graph::new();
            let b = g.bind(&params, false);
            let x = g.constant(latent.clone());
            rvq.forward(&mut g, &b, x, None).unwrap().frozen
        };
        let names: Vec<String> = (0..rvq.n_codebooks).map(ResidualVq::codebook_name).collect();

        let on_latent = {
            let (params, frozen, proj) = (params.clone(), frozen.clone(), proj.clone());
            move |g: &mut Graph, t: &[Tensor]| {
                let b = g.bind(&params, false);
                let x = g.leaf(t[0].clone());
                let out = rvq.forward(g, &b, x, Some(&frozen))?;
                let p = project(g, out.quantized, &proj);
                let l = g.weighted_sum(&[(p, 1.0), (out.commitment_loss, 0.25)]);
                Ok((l, vec![x]))
            }
        };
        let on_codebooks = {
            let (names, frozen, latent, proj) = (names.clone(), frozen.clone(), latent.clone(), proj.clone());
            move |g: &mut Graph, t: &[Tensor]| {
                let mut ps = ParamSet::new();
                for (name, v) in names.iter().zip(t) {
                    ps.insert(name.clone(), v.clone());
                }
                let b = g.bind(&ps, true);
                let x = g.constant(latent.clone());
                let out = rvq.forward(g, &b, x, Some(&frozen))?;
                let p = project(g, out.quantized, &proj);
                let l = g.weighted_sum(&[(p, 1.0), (out.codebook_loss, 1.0)]);
                Ok((l, names.iter().map(|n| b.get(n)).collect()))
            }
        };
        let books: Vec<Tensor> = names.iter().map(|n| params.get(n).unwrap().clone()).collect();
        let mut reports = match check_instance(&on_latent, &[latent], o.probes, o.tolerance, r) {
            Ok(v) => v,
            Err(e) => {
                fam.add(Err(e));
                continue;
            }
        };
        match check_instance(&on_codebooks, &books, o.probes, o.tolerance, r) {
            Ok(v) => reports.extend(v),
            Err(e) => {
                fam.add(Err(e));
                continue;
            }
        }
        fam.add(Ok(reports));
    }
    fam
}

fn family_mel(o: &SuiteOptions, r: &mut ChaCha8Rng) -> FamilySummary {
    let mut fam = FamilySummary::new("mel loss");
    let scales = Arc::new(vec![
        SpectrogramConfig::new(32, 8, 44_100.0),
        SpectrogramConfig::new(64, 12, 44_100.0),
    ]);
    for _ in 0..o.instances {
        let shape = [r.random_range(1..=2), r.random_range(1..=3), r.random_range(64..=128)];
        let reference = randn(&shape, r).scale(0.3);
        let inputs = [randn(&shape, r).scale(0.3)];
        let scales = scales.clone();
        let build = move |g: &mut Graph, t: &[Tensor]| {
            let x = g.leaf(t[0].clone());
            let l = g.multiscale_mel_loss(x, &reference, &scales)?;
            Ok((l, vec![x]))
        };
        fam.add(check_instance(&build, &inputs, o.probes, o.tolerance, r));
    }
    fam
}

fn family_covariance(o: &SuiteOptions, r: &mut ChaCha8Rng) -> FamilySummary {
    let mut fam = FamilySummary::new("covariance loss");
    for _ in 0..o.instances {
        let shape = [r.random_range(1..=2), r.random_range(2..=5), r.random_range(8..=40)];
        let reference = randn(&shape, r);
        let inputs = [randn(&shape, r)];
        let build = move |g: &mut Graph, t: &[Tensor]| {
            let x = g.leaf(t[0].clone());
            let l = g.covariance_loss(x, &reference)?;
            Ok((l, vec![x]))
        };
        fam.add(check_instance(&build, &inputs, o.probes, o.tolerance, r));
    }
    fam
}

/// Adversarial objectives through a small discriminator suite: the
/// discriminator loss with respect to the discriminator weights, and the
/// generator and feature-matching losses with respect to the fake audio.
fn family_adversarial(o: &SuiteOptions, r: &mut ChaCha8Rng) -> [FamilySummary; 3] {
    let mut fams = [
        FamilySummary::new("adversarial (discriminator)"),
        FamilySummary::new("adversarial (generator)"),
        FamilySummary::new("feature matching"),
    ];
    let cfg = DiscriminatorSuiteConfig {
        io_channels: 2,
        mpd_periods: vec![2, 3],
        msd_scales: vec![1, 2],
        mrsd_windows: vec![32, 64],
        hidden: 3,
        shared_weights: true,
    };
    let suite = Arc::new(DiscriminatorSuite::new(cfg).unwrap());
    let len = 96;
    for _ in 0..o.instances {
        // Unit-scale weights: at the training init the pre-activations are so
        // small that leaky-relu kinks crowd every finite-difference stencil.
        let mut params = suite.init_params(r);
        for (_, t) in params.iter_mut() {
            let fan_in: usize = t.shape().iter().skip(1).product::<usize>().max(1);
            *t = randn(t.shape(), r).scale(1.0 / (fan_in as f64).sqrt());
        }
        let real = randn(&[1, 2, len], r);
        let fake = randn(&[1, 2, len], r);
        let names: Vec<String> = params.names().cloned().collect();

        let d_build = {
            let (suite, names, real, fake) = (suite.clone(), names.clone(), real.clone(), fake.clone());
            move |g: &mut Graph, t: &[Tensor]| {
                let mut ps = ParamSet::new();
                for (n, v) in names.iter().zip(t) {
                    ps.insert(n.clone(), v.clone());
                }
                let b = g.bind(&ps, true);
                let (xr, xf) = (g.constant(real.clone()), g.constant(fake.clone()));
                let dr = suite.discriminate(g, &b, xr)?;
                let df = suite.discriminate(g, &b, xf)?;
                let l = g.adversarial_d_loss(&dr, &df);
                Ok((l, names.iter().map(|n| b.get(n)).collect()))
            }
        };
        let tensors: Vec<Tensor> = names.iter().map(|n| params.get(n).unwrap().clone()).collect();
        // A handful of coordinates per tensor keeps the cost bounded.
        fams[0].add(check_instance(&d_build, &tensors, 3, o.tolerance, r));

        let g_build = {
            let (suite, params) = (suite.clone(), params.clone());
            move |g: &mut Graph, t: &[Tensor]| {
                let b = g.bind(&params, false);
                let x = g.leaf(t[0].clone());
                let df = suite.discriminate(g, &b, x)?;
                Ok((g.adversarial_g_loss(&df), vec![x]))
            }
        };
        fams[1].add(check_instance(&g_build, std::slice::from_ref(&fake), o.probes, o.tolerance, r));

        let real_values = suite.discriminate_values(&params, &real).unwrap();
        let fm_build = {
            let (suite, params) = (suite.clone(), params.clone());
            move |g: &mut Graph, t: &[Tensor]| {
                let b = g.bind(&params, false);
                let x = g.leaf(t[0].clone());
                let df = suite.discriminate(g, &b, x)?;
                Ok((g.feature_matching_loss(&real_values, &df), vec![x]))
            }
        };
        fams[2].add(check_instance(&fm_build, std::slice::from_ref(&fake), o.probes, o.tolerance, r));
    }
    fams
}

/// Runs every family.
pub fn run_suite(o: &SuiteOptions) -> Vec<FamilySummary> {
    let mut r = ChaCha8Rng::seed_from_u64(o.seed);
    let mut out = vec![
        family_conv(o, &mut r),
        family_conv_transpose(o, &mut r),
        family_snake(o, &mut r),
        family_leaky_relu(o, &mut r),
        family_rvq(o, &mut r),
        family_mel(o, &mut r),
        family_covariance(o, &mut r),
    ];
    out.extend(family_adversarial(o, &mut r));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let o = SuiteOptions {
            instances: 2,
            probes: 6,
            ..SuiteOptions::default()
        };
        let fams = run_suite(&o);
        assert_eq!(fams.len(), 10);
        for f in &fams {
            assert!(f.passed(), "{f:?}");
        }
    }
}
