//! Real spherical harmonics, ACN ordering, SN3D normalization, no
//! Condon-Shortley phase.

/// ACN index of degree `n`, order `m` (−n ≤ m ≤ n).
pub fn acn(n: usize, m: isize) -> usize {
    ((n * n + n) as isize + m) as usize
}

/// Degree and order of an ACN index.
pub fn acn_to_nm(index: usize) -> (usize, isize) {
    let n = (index as f64).sqrt().floor() as usize;
    let n = if (n + 1) * (n + 1) <= index { n + 1 } else { n };
    (n, index as isize - (n * n + n) as isize)
}

/// Associated Legendre functions P_n^m(x) for 0 ≤ m ≤ n ≤ order, without
/// the (−1)^m phase, indexed `[n][m]`.
fn legendre_table(order: usize, x: f64) -> Vec<Vec<f64>> {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut p = vec![vec![0.0; order + 1]; order + 1];
    p[0][0] = 1.0;
    for m in 1..=order {
        p[m][m] = p[m - 1][m - 1] * (2 * m - 1) as f64 * s;
    }
    for m in 0..order {
        p[m + 1][m] = x * (2 * m + 1) as f64 * p[m][m];
    }
    for m in 0..=order {
        for n in m + 2..=order {
            p[n][m] = ((2 * n - 1) as f64 * x * p[n - 1][m] - (n + m - 1) as f64 * p[n - 2][m]) / (n - m) as f64;
        }
    }
    p
}

/// √((2 − δ_{m0}) (n−m)!/(n+m)!)
fn sn3d(n: usize, m: usize) -> f64 {
    let ratio: f64 = (n - m + 1..=n + m).map(|k| 1.0 / k as f64).product();
    let delta = if m == 0 { 1.0 } else { 2.0 };
    (delta * ratio).sqrt()
}

/// All `(order+1)²` harmonics at one direction, in ACN order.
pub fn real_sh(order: usize, azimuth: f64, elevation: f64) -> Vec<f64> {
    let p = legendre_table(order, elevation.sin());
    let mut y = vec![0.0; (order + 1) * (order + 1)];
    for n in 0..=order {
        for m in -(n as isize)..=n as isize {
            let am = m.unsigned_abs();
            let trig = if m >= 0 {
                (am as f64 * azimuth).cos()
            } else {
                (am as f64 * azimuth).sin()
            };
            y[acn(n, m)] = sn3d(n, am) * p[n][am] * trig;
        }
    }
    y
}
