//! Loudspeaker layouts and the mode-matching decoder.

use nalgebra::DMatrix;

use super::harmonics::real_sh;
use super::BFormatSignal;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tikhonov term added to squared singular values.
pub const REGULARIZATION: f64 = 1e-9;
/// Smallest accepted ratio of smallest to largest singular value.
pub const DEGENERACY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLayout {
    pub name: String,
    /// `(azimuth, elevation)` in radians; azimuth counter-clockwise from the
    /// front, so positive values are to the left.
    pub directions: Vec<(f64, f64)>,
    /// Output position of a silent LFE feed, if the layout has one.
    pub lfe_index: Option<usize>,
}

fn unit(az: f64, el: f64) -> [f64; 3] {
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

impl SpeakerLayout {
    pub fn new(name: impl Into<String>, directions: Vec<(f64, f64)>) -> Result<Self> {
        let layout = Self {
            name: name.into(),
            directions,
            lfe_index: None,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.directions.is_empty() {
            return Err(Error::InvalidLayout("no speakers".into()));
        }
        for (i, &(a, e)) in self.directions.iter().enumerate() {
            if !a.is_finite() || !e.is_finite() {
                return Err(Error::InvalidLayout(format!("speaker {i} has a non-finite direction")));
            }
            let u = unit(a, e);
            for (j, &(b, f)) in self.directions[..i].iter().enumerate() {
                let v = unit(b, f);
                let d2: f64 = u.iter().zip(&v).map(|(p, q)| (p - q).powi(2)).sum();
                if d2 < 1e-18 {
                    return Err(Error::InvalidLayout(format!("speakers {j} and {i} coincide")));
                }
            }
        }
        if let Some(k) = self.lfe_index {
            if k > self.directions.len() {
                return Err(Error::InvalidLayout(format!("LFE position {k} out of range")));
            }
        }
        Ok(())
    }

    /// Number of output feeds, counting a silent LFE.
    pub fn n_outputs(&self) -> usize {
        self.directions.len() + usize::from(self.lfe_index.is_some())
    }

    /// Built-in layouts: `7.1.4`, `cube8`, `stereo`.
    pub fn named(name: &str) -> Result<Self> {
        let d = f64::to_radians;
        let directions: Vec<(f64, f64)> = match name {
            "7.1.4" => {
                let h = d(35.0);
                vec![
                    (d(30.0), 0.0),
                    (d(-30.0), 0.0),
                    (0.0, 0.0),
                    (d(90.0), 0.0),
                    (d(-90.0), 0.0),
                    (d(135.0), 0.0),
                    (d(-135.0), 0.0),
                    (d(45.0), h),
                    (d(-45.0), h),
                    (d(135.0), h),
                    (d(-135.0), h),
                ]
            }
            "cube8" => {
                let el = (1.0 / 3f64.sqrt()).asin();
                [45.0, 135.0, -135.0, -45.0]
                    .iter()
                    .flat_map(|&a| [(d(a), el), (d(a), -el)])
                    .collect()
            }
            "stereo" => vec![(d(30.0), 0.0), (d(-30.0), 0.0)],
            other => return Err(Error::UnknownLayout(other.to_string())),
        };
        let mut layout = Self::new(name, directions)?;
        if name == "7.1.4" {
            // Feed order L R C LFE Ls Rs Lrs Rrs Ltf Rtf Ltr Rtr.
            layout.lfe_index = Some(3);
        }
        Ok(layout)
    }

    /// `n` speakers spread evenly over the sphere on a Fibonacci lattice.
    pub fn spread(n: usize) -> Result<Self> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let directions = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                (golden * i as f64, z.asin())
            })
            .collect();
        Self::new(format!("spread{n}"), directions)
    }

    /// `[(order+1)² × speakers]` matrix of harmonics at each speaker.
    pub fn sh_matrix(&self, order: usize) -> DMatrix<f64> {
        let n_ch = (order + 1) * (order + 1);
        let mut y = DMatrix::zeros(n_ch, self.directions.len());
        for (s, &(az, el)) in self.directions.iter().enumerate() {
            for (c, v) in real_sh(order, az, el).into_iter().enumerate() {
                y[(c, s)] = v;
            }
        }
        y
    }

    /// Regularized pseudoinverse of [`Self::sh_matrix`], `[speakers × channels]`.
    pub fn decoder(&self, order: usize) -> Result<DMatrix<f64>> {
        self.validate()?;
        let svd = self.sh_matrix(order).svd(true, true);
        let sv = &svd.singular_values;
        let max = sv.max();
        let min = sv.min();
        let ratio = if max > 0.0 { min / max } else { 0.0 };
        if ratio < DEGENERACY_THRESHOLD {
            return Err(Error::DegenerateLayout {
                ratio,
                threshold: DEGENERACY_THRESHOLD,
            });
        }
        let u = svd.u.as_ref().expect("requested U");
        let vt = svd.v_t.as_ref().expect("requested Vᵀ");
        let inv = DMatrix::from_diagonal(&sv.map(|s| s / (s * s + REGULARIZATION)));
        Ok(vt.transpose() * inv * u.transpose())
    }
}

/// Speaker feeds `[outputs × frames]`; a silent LFE row is inserted where the
/// layout has one.
pub fn render(b: &BFormatSignal, layout: &SpeakerLayout) -> Result<Tensor> {
    let dec = layout.decoder(b.order().value())?;
    let frames = b.n_frames();
    let n_ch = b.n_channels();
    let x = DMatrix::from_row_slice(n_ch, frames, b.samples().data());
    let s = dec * x;
    let mut out = Vec::with_capacity(layout.n_outputs() * frames);
    for r in 0..layout.directions.len() {
        if layout.lfe_index == Some(r) {
            out.extend(std::iter::repeat_n(0.0, frames));
        }
        out.extend(s.row(r).iter().copied());
    }
    if layout.lfe_index == Some(layout.directions.len()) {
        out.extend(std::iter::repeat_n(0.0, frames));
    }
    Tensor::new(vec![layout.n_outputs(), frames], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_layouts() {
        assert_eq!(SpeakerLayout::named("7.1.4").unwrap().n_outputs(), 12);
        assert_eq!(SpeakerLayout::named("cube8").unwrap().n_outputs(), 8);
        assert_eq!(SpeakerLayout::named("stereo").unwrap().n_outputs(), 2);
        assert!(matches!(SpeakerLayout::named("5.1"), Err(Error::UnknownLayout(_))));
    }

    #[test]
    fn invalid_layouts() {
        assert!(SpeakerLayout::new("none", vec![]).is_err());
        assert!(SpeakerLayout::new("dup", vec![(0.1, 0.2), (0.1 + 2.0 * std::f64::consts::PI, 0.2)]).is_err());
    }

    #[test]
    fn coincident_speakers_by_pole_are_rejected() {
        // Azimuth is meaningless at the pole.
        assert!(SpeakerLayout::new("poles", vec![(0.0, std::f64::consts::FRAC_PI_2), (1.0, std::f64::consts::FRAC_PI_2)]).is_err());
    }
}
