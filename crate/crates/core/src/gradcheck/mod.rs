//! Central-difference gradient checking.
//!
//! Each probed coordinate is perturbed by ±h and ±2h. The central difference
//! at h is compared with the analytic gradient. Coordinates where the
//! one-sided slopes reveal a kink within 2h (for example an L1 term
//! changing sign) are reported as skipped instead of failed.

pub mod suite;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates to probe; all of them when `None`.
    pub indices: Option<Vec<usize>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            indices: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub kink: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.probes.iter().filter(|p| !p.kink).count()
    }

    pub fn skipped(&self) -> usize {
        self.probes.len() - self.checked()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.probes
            .iter()
            .filter(|p| !p.kink)
            .map(|p| p.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checked() > 0 && self.max_rel_error() <= self.tolerance
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .filter(|p| !p.kink)
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares `analytic` with central differences of `f` around `x`.
///
/// The relative error of a coordinate is `|a − n| / max(|a|, |n|, s)` with
/// `s = 1e-3 · max|a|`, so coordinates with negligible gradient are judged
/// against the overall gradient scale.
pub fn check_gradient<F>(mut f: F, x: &Tensor, analytic: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    assert_eq!(x.shape(), analytic.shape(), "gradient shape mismatch");
    let h = opts.step;
    let f0 = f(x)?;
    let floor = (1e-3 * analytic.max_abs()).max(1e-12);
    let indices: Vec<usize> = match &opts.indices {
        Some(v) => v.clone(),
        None => (0..x.numel()).collect(),
    };
    let mut probes = Vec::with_capacity(indices.len());
    let mut work = x.clone();
    for index in indices {
        let orig = x.data()[index];
        let mut at = |delta: f64, work: &mut Tensor| -> Result<f64> {
            work.data_mut()[index] = orig + delta;
            let v = f(work);
            work.data_mut()[index] = orig;
            v
        };
        let (p1, m1) = (at(h, &mut work)?, at(-h, &mut work)?);
        let (p2, m2) = (at(2.0 * h, &mut work)?, at(-2.0 * h, &mut work)?);
        let numeric = (p1 - m1) / (2.0 * h);
        // Jump between one-sided slopes; linear in the step for smooth f.
        let jump1 = (p1 - f0) / h - (f0 - m1) / h;
        let jump2 = (p2 - f0) / (2.0 * h) - (f0 - m2) / (2.0 * h);
        let slope = ((p1 - f0) / h).abs().max(((f0 - m1) / h).abs());
        let roundoff = 1e3 * f64::EPSILON * (f0.abs() + p2.abs() + m2.abs() + 1e-300) / h;
        let kink = (jump2 - 2.0 * jump1).abs() > 1e-6 * slope + roundoff;
        let a = analytic.data()[index];
        let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        probes.push(Probe {
            index,
            analytic: a,
            numeric,
            rel_error,
            kink,
        });
    }
    Ok(GradCheckReport {
        probes,
        tolerance: opts.tolerance,
    })
}

/// `ceil(fraction · n)` distinct coordinates, at least one.
pub fn sample_coordinates<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Vec<usize> {
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_function_passes() {
        let x = Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let f = |t: &Tensor| Ok(t.data().iter().map(|v| v.sin() * v * v).sum::<f64>());
        let g = x.map(|v| v.cos() * v * v + 2.0 * v * v.sin());
        let r = check_gradient(f, &x, &g, &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.skipped(), 0);
    }

    #[test]
    fn wrong_gradient_fails() {
        let x = Tensor::new(vec![2], vec![0.5, 1.5]).unwrap();
        let f = |t: &Tensor| Ok(t.sq_norm());
        let wrong = x.scale(2.0 * 1.001);
        assert!(!check_gradient(f, &x, &wrong, &GradCheckOptions::default()).unwrap().passed());
    }

    #[test]
    fn kinks_are_skipped() {
        let x = Tensor::new(vec![2], vec![3e-6, 0.7]).unwrap();
        let f = |t: &Tensor| Ok(t.data()[0].abs() + t.data()[1].abs());
        let g = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let r = check_gradient(f, &x, &g, &GradCheckOptions::default()).unwrap();
        assert!(r.probes[0].kink);
        assert!(!r.probes[1].kink);
        assert!(r.passed());
    }
}
