//! Normal-distribution special functions.
//!
//! `libm` supplies `erfc` (musl port, ~1 ulp); `statrs` supplies the initial
//! inverse, which is polished with one Newton step against `erfc`.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal log-density.
pub fn ln_norm_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Φ(z).
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail Q(z) = 1 − Φ(z), accurate for large z.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// ln Q(z). Uses the asymptotic expansion where Q underflows.
pub fn ln_norm_sf(z: f64) -> f64 {
    if z < 35.0 {
        norm_sf(z).ln()
    } else {
        let r = 1.0 / (z * z);
        let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
        -0.5 * z * z - z.ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Φ⁻¹(p) for p in (0, 1).
pub fn norm_inv_cdf(p: f64) -> f64 {
    -norm_inv_sf(p)
}

/// Q⁻¹(q) for q in (0, 1).
pub fn norm_inv_sf(q: f64) -> f64 {
    let z = SQRT_2 * erfc_inv(2.0 * q);
    let slope = norm_pdf(z);
    if !(z.is_finite() && slope > 0.0) {
        return z;
    }
    let step = (norm_sf(z) - q) / slope;
    if step.is_finite() {
        z + step
    } else {
        z
    }
}

/// ln(Φ(b) − Φ(a)) for a < b, evaluated on the tail that avoids cancellation.
pub fn ln_norm_interval(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        let la = ln_norm_sf(a);
        let lb = ln_norm_sf(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b < 0.0 {
        ln_norm_interval(-b, -a)
    } else {
        (1.0 - norm_sf(b) - norm_cdf(a)).ln()
    }
}

/// Numerically stable ln(1 + eˣ).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_known_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((norm_sf(5.0) - 2.866_515_718_791_939e-7).abs() < 1e-20);
    }

    #[test]
    fn inverse_round_trips() {
        for &p in &[1e-10, 0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((norm_cdf(norm_inv_cdf(p)) - p).abs() < 1e-12 * p.max(1e-3));
            assert!((norm_sf(norm_inv_sf(p)) - p).abs() < 1e-12 * p.max(1e-3));
        }
    }

    #[test]
    fn tail_log_is_continuous_at_switch() {
        let below = ln_norm_sf(34.999_999);
        let above = ln_norm_sf(35.000_001);
        assert!((below - above).abs() < 1e-3);
        assert!(ln_norm_sf(50.0).is_finite());
    }

    #[test]
    fn interval_mass() {
        let m = ln_norm_interval(-1.0, 1.0).exp();
        assert!((m - 0.682_689_492_137_085_9).abs() < 1e-14);
        let t = ln_norm_interval(40.0, 41.0);
        assert!(t.is_finite() && t < -800.0);
        assert_eq!(ln_norm_interval(1.0, 1.0), f64::NEG_INFINITY);
    }
}
