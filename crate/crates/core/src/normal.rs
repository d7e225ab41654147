//! Standard normal distribution helpers and bivariate normal orthant
//! probabilities.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::quad;

/// Absolute tolerance for the bivariate normal quadrature.
pub const BVN_TOLERANCE: f64 = 1e-10;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal quantile. Returns `±inf` at the endpoints and NaN outside `[0, 1]`.
pub fn inv_cdf(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -inv_cdf(1.0 - p);
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    // Halley steps against our own CDF.
    if p > 1e-300 {
        for _ in 0..2 {
            if !x.is_finite() {
                break;
            }
            let e = cdf(x) - p;
            let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
            x -= u / (1.0 + 0.5 * x * u);
        }
    }
    x
}

/// `P(X <= h, Y <= k)` for standard normals with correlation `r`.
///
/// Uses Plackett's identity `Φ₂(h, k; r) = Φ(h)Φ(k) + ∫₀ʳ φ₂(h, k; t) dt` with the
/// substitution `t = sin θ`, which removes the `1/√(1-t²)` singularity so the
/// integrand stays bounded and smooth up to `|r| = 1`.
pub fn bivariate_cdf(h: f64, k: f64, r: f64) -> Result<f64> {
    if h.is_nan() || k.is_nan() || r.is_nan() {
        return Err(Error::invalid("bivariate_cdf", "NaN argument"));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::invalid("r", format!("correlation {r} outside [-1, 1]")));
    }
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if h == f64::INFINITY {
        return Ok(cdf(k));
    }
    if k == f64::INFINITY {
        return Ok(cdf(h));
    }
    if r == 1.0 {
        return Ok(cdf(h.min(k)));
    }
    if r == -1.0 {
        return Ok((cdf(h) + cdf(k) - 1.0).max(0.0));
    }
    let base = cdf(h) * cdf(k);
    if r == 0.0 {
        return Ok(base);
    }
    let hk = h * k;
    let ss = h * h + k * k;
    let integrand = |theta: f64| {
        let s = theta.sin();
        let c2 = 1.0 - s * s;
        if c2 <= 0.0 {
            // Limit at |t| = 1: exponent is -(h - s k)^2/0 unless h = s k.
            let diff = h - s * k;
            return if diff == 0.0 {
                (-0.5 * h * h).exp() / (2.0 * PI)
            } else {
                0.0
            };
        }
        (-(ss - 2.0 * hk * s) / (2.0 * c2)).exp() / (2.0 * PI)
    };
    let q = quad::integrate(integrand, 0.0, r.asin(), BVN_TOLERANCE);
    if !q.converged || q.error > BVN_TOLERANCE {
        return Err(Error::QuadratureNonConvergence {
            tolerance: BVN_TOLERANCE,
            estimate: q.error,
        });
    }
    Ok((base + q.value).clamp(0.0, 1.0))
}

/// `P(X > h, Y > k)` for standard normals with correlation `r`.
pub fn bivariate_upper(h: f64, k: f64, r: f64) -> Result<f64> {
    bivariate_cdf(-h, -k, r)
}

/// Bivariate standard normal density with correlation `r`.
pub fn bivariate_pdf(x: f64, y: f64, r: f64) -> f64 {
    let one_m = 1.0 - r * r;
    (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * one_m)).exp() / (2.0 * PI * one_m.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cdf_reference_values() {
        // Reference values from mpmath at 30 digits.
        assert_abs_diff_eq!(cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-15);
        assert_abs_diff_eq!(cdf(-2.0), 0.022_750_131_948_179_2, epsilon = 1e-15);
        assert_abs_diff_eq!(cdf(0.0), 0.5, epsilon = 0.0);
    }

    #[test]
    fn quantile_reference_values() {
        assert_abs_diff_eq!(inv_cdf(0.75), 0.674_489_750_196_081_7, epsilon = 1e-14);
        assert_abs_diff_eq!(inv_cdf(0.95), 1.644_853_626_951_472_7, epsilon = 1e-14);
        assert_abs_diff_eq!(inv_cdf(1e-10), -6.361_340_902_404_056, epsilon = 1e-10);
        assert_eq!(inv_cdf(0.5), 0.0);
        assert!(inv_cdf(1.5).is_nan());
    }

    #[test]
    fn quantile_inverts_cdf() {
        // Above ~3 the round trip is limited by the spacing of doubles near 1.
        for i in 1..200 {
            let x = -8.0 + 11.0 * f64::from(i) / 200.0;
            assert_abs_diff_eq!(inv_cdf(cdf(x)), x, epsilon = 1e-9);
        }
    }

    #[test]
    fn bivariate_closed_forms() {
        // P(X<=0, Y<=0) = 1/4 + asin(r)/(2π)
        for &r in &[-0.95, -0.5, 0.0, 0.3, 0.8, 0.999] {
            let exact = 0.25 + f64::asin(r) / (2.0 * PI);
            assert_abs_diff_eq!(bivariate_cdf(0.0, 0.0, r).unwrap(), exact, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(bivariate_cdf(0.7, -0.2, 1.0).unwrap(), cdf(-0.2), epsilon = 1e-15);
        assert_abs_diff_eq!(
            bivariate_cdf(0.7, 0.2, -1.0).unwrap(),
            cdf(0.7) + cdf(0.2) - 1.0,
            epsilon = 1e-15
        );
        assert_eq!(bivariate_cdf(f64::NEG_INFINITY, 1.0, 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(bivariate_cdf(f64::INFINITY, 1.0, 0.5).unwrap(), cdf(1.0));
    }

    #[test]
    fn bivariate_matches_brute_force_grid() {
        // Independent check: integrate the conditional form
        // ∫_{-∞}^{h} φ(x) Φ((k - r x)/√(1-r²)) dx with adaptive quadrature.
        for &(h, k, r) in &[
            (0.5, -0.3, 0.6),
            (-1.2, 0.8, -0.4),
            (2.0, 1.5, 0.95),
            (-0.3, -0.3, 0.9999),
            (1.0, -2.0, -0.99),
        ] {
            let s = f64::sqrt(1.0 - r * r);
            let q = quad::integrate(|x| pdf(x) * cdf((k - r * x) / s), -12.0, h, 1e-13);
            let got = bivariate_cdf(h, k, r).unwrap();
            assert_abs_diff_eq!(got, q.value, epsilon = 1e-10);
        }
    }

    #[test]
    fn bivariate_rejects_bad_correlation() {
        assert!(bivariate_cdf(0.0, 0.0, 1.5).is_err());
        assert!(bivariate_cdf(f64::NAN, 0.0, 0.5).is_err());
    }
}
