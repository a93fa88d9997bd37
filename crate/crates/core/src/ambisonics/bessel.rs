//! Cylindrical Bessel functions of the first kind.

const SERIES_LIMIT: f64 = 12.0;

/// J_m(x) for integer order `m ≥ 0`.
pub fn bessel_j(m: usize, x: f64) -> f64 {
    if x < 0.0 {
        let v = bessel_j(m, -x);
        return if m % 2 == 1 { -v } else { v };
    }
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    if x < SERIES_LIMIT {
        series(m, x)
    } else {
        miller(m, x)
    }
}

/// Σₖ (−1)ᵏ (x/2)^{2k+m} / (k! (k+m)!)
fn series(m: usize, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    for i in 1..=m {
        term *= half / i as f64;
    }
    if term == 0.0 {
        return 0.0;
    }
    let q = half * half;
    let mut sum = term;
    for k in 1.. {
        term *= -q / (k as f64 * (k + m) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() && k as f64 > half {
            break;
        }
    }
    sum
}

/// Downward recurrence from far above the turning point, normalized with
/// J₀ + 2 Σₖ J₂ₖ = 1.
fn miller(m: usize, x: f64) -> f64 {
    let base = m.max(x as usize) as f64;
    let mut top = (base + 30.0 + (60.0 * base).sqrt()) as usize;
    top += top % 2;
    let (mut above, mut cur) = (0.0f64, 1e-30f64);
    let mut norm = 0.0;
    let mut result = 0.0;
    for k in (1..=top).rev() {
        let below = 2.0 * k as f64 / x * cur - above;
        above = cur;
        cur = below;
        // `cur` now holds J_{k−1} up to scale.
        if k - 1 == m {
            result = cur;
        }
        if (k - 1) % 2 == 0 {
            norm += if k == 1 { cur } else { 2.0 * cur };
        }
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            above *= 1e-250;
            norm *= 1e-250;
            result *= 1e-250;
        }
    }
    result / norm
}
