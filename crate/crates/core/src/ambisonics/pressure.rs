//! Two-dimensional (circular-harmonic) pressure field in the horizontal
//! plane.

use std::f64::consts::SQRT_2;

use super::bessel::bessel_j;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    /// Cosine term, `B_mm^{+1}`.
    Cos,
    /// Sine term, `B_mm^{−1}`.
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularCoefficient {
    pub m: usize,
    pub parity: Parity,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureFieldSpec {
    coefficients: Vec<CircularCoefficient>,
    truncation_order: usize,
    wave_number: f64,
    radius: f64,
    angle: f64,
}

impl PressureFieldSpec {
    pub fn new(
        coefficients: Vec<CircularCoefficient>,
        truncation_order: usize,
        wave_number: f64,
        radius: f64,
        angle: f64,
    ) -> Result<Self> {
        for c in &coefficients {
            if c.m > truncation_order {
                return Err(Error::Config(format!(
                    "coefficient of order {} exceeds truncation order {truncation_order}",
                    c.m
                )));
            }
            if c.m == 0 && c.parity == Parity::Sin {
                return Err(Error::Config("order 0 has no sine term".into()));
            }
            if !c.value.is_finite() {
                return Err(Error::NonFinite("pressure coefficient".into()));
            }
        }
        if ![wave_number, radius, angle].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pressure field geometry".into()));
        }
        Ok(Self {
            coefficients,
            truncation_order,
            wave_number,
            radius,
            angle,
        })
    }

    pub fn coefficients(&self) -> &[CircularCoefficient] {
        &self.coefficients
    }

    pub fn truncation_order(&self) -> usize {
        self.truncation_order
    }

    pub fn wave_number(&self) -> f64 {
        self.wave_number
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }
}

/// p = B₀₀ J₀(kr) + Σ_{m≥1} √2 J_m(kr) (B_mm^{+1} cos mθ + B_mm^{−1} sin mθ)
pub fn pressure_field(spec: &PressureFieldSpec) -> f64 {
    let kr = spec.wave_number * spec.radius;
    let mut cos_terms = vec![0.0; spec.truncation_order + 1];
    let mut sin_terms = vec![0.0; spec.truncation_order + 1];
    for c in &spec.coefficients {
        match c.parity {
            Parity::Cos => cos_terms[c.m] += c.value,
            Parity::Sin => sin_terms[c.m] += c.value,
        }
    }
    let mut p = cos_terms[0] * bessel_j(0, kr);
    for m in 1..=spec.truncation_order {
        let mt = m as f64 * spec.angle;
        p += bessel_j(m, kr) * SQRT_2 * (cos_terms[m] * mt.cos() + sin_terms[m] * mt.sin());
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coef(m: usize, parity: Parity, value: f64) -> CircularCoefficient {
        CircularCoefficient { m, parity, value }
    }

    #[test]
    fn omni_term_at_origin() {
        let s = PressureFieldSpec::new(vec![coef(0, Parity::Cos, 1.0), coef(2, Parity::Sin, 5.0)], 3, 10.0, 0.0, 0.3).unwrap();
        assert_eq!(pressure_field(&s), 1.0);
    }

    #[test]
    fn zeroth_order_is_scaled_j0() {
        let s = PressureFieldSpec::new(vec![coef(0, Parity::Cos, 2.5)], 0, 7.0, 0.4, 1.0).unwrap();
        assert!((pressure_field(&s) - 2.5 * bessel_j(0, 2.8)).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs() {
        assert!(PressureFieldSpec::new(vec![coef(0, Parity::Sin, 1.0)], 2, 1.0, 1.0, 0.0).is_err());
        assert!(PressureFieldSpec::new(vec![coef(3, Parity::Cos, 1.0)], 2, 1.0, 1.0, 0.0).is_err());
    }
}
