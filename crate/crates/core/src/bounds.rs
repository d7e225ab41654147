//! Closed-form complementarity quantities for a pair of agents.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::sdt::PairConfig;

/// Largest `min(a_H, a_M)` for which the threshold formula is reported as
/// valid. Above it the closed form is flagged as an extrapolation.
pub const NEAR_CHANCE_MAX_ACCURACY: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeFlag {
    NearChanceValid,
    Extrapolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Value clamped to `[0, 1]`.
    pub value: f64,
    pub unclamped: f64,
    pub regime: RegimeFlag,
}

fn check_accuracy(a: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::DegenerateAgent { accuracy: a });
    }
    Ok(())
}

/// Complementarity threshold on the binary error correlation.
pub fn rho_star(a_h: f64, a_m: f64) -> Result<Threshold> {
    check_accuracy(a_h)?;
    check_accuracy(a_m)?;
    let a_star = a_h.max(a_m);
    let a_minus = a_h.min(a_m);
    let (e_h, e_m) = (1.0 - a_h, 1.0 - a_m);
    let e_star = e_h.min(e_m);
    let unclamped = e_star * (a_minus - a_star + a_star * a_minus) / (e_h * e_m);
    let outside = !(0.0..=1.0).contains(&unclamped);
    let regime = if outside || a_minus > NEAR_CHANCE_MAX_ACCURACY {
        RegimeFlag::Extrapolated
    } else {
        RegimeFlag::NearChanceValid
    };
    Ok(Threshold {
        value: unclamped.clamp(0.0, 1.0),
        unclamped,
        regime,
    })
}

/// Correlation correction `√2·Φ⁻¹((1+ρ)/2)`.
pub fn kappa(rho: f64) -> Result<f64> {
    if rho == 1.0 {
        return Err(Error::UnboundedCorrection);
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid("rho", format!("{rho} outside [0, 1)")));
    }
    Ok(SQRT_2 * normal::inv_cdf(0.5 * (1.0 + rho)))
}

/// Weights `d_i / √(d_H² + d_M² − 2ρ d_H d_M)`.
pub fn optimal_weights(d_h: f64, d_m: f64, rho: f64) -> Result<(f64, f64)> {
    if !(d_h >= 0.0 && d_m >= 0.0) || (d_h == 0.0 && d_m == 0.0) {
        return Err(Error::invalid(
            "d",
            format!("sensitivities ({d_h}, {d_m}) must be >= 0 and not both 0"),
        ));
    }
    let denom = d_h * d_h + d_m * d_m - 2.0 * rho * d_h * d_m;
    if !(denom > 1e-300) {
        return Err(Error::DegenerateWeights { denominator: denom });
    }
    let s = denom.sqrt();
    Ok((d_h / s, d_m / s))
}

/// `a* + e*·Φ((d₋ − κ(ρ))/√2)`.
pub fn optimal_team_accuracy(a_star: f64, e_star: f64, d_minus: f64, rho: f64) -> Result<f64> {
    if d_minus < 0.0 {
        return Err(Error::invalid("d_minus", format!("{d_minus} < 0")));
    }
    Ok(a_star + e_star * normal::cdf((d_minus - kappa(rho)?) / SQRT_2))
}

/// `e*·Φ(d₋/√2)`, the gain at zero error correlation.
pub fn max_gain(e_star: f64, d_minus: f64) -> f64 {
    e_star * normal::cdf(d_minus / SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxInterval {
    pub lo: f64,
    pub hi: f64,
    /// `false` where the printed lower bound exceeds the upper one.
    pub ordered: bool,
}

/// Worst-case gain interval as a function of `Δd` and `e*`.
pub fn minimax_interval(delta_d: f64, e_star: f64) -> Result<MinimaxInterval> {
    if !(delta_d >= 0.0) {
        return Err(Error::invalid("delta_d", format!("{delta_d} < 0")));
    }
    if !(0.0..=1.0).contains(&e_star) {
        return Err(Error::invalid("e_star", format!("{e_star} outside [0, 1]")));
    }
    let lo = delta_d / (2.0 * PI.sqrt() * (1.0 + delta_d * delta_d).sqrt());
    let hi = (2.0 / PI).sqrt() * (delta_d * e_star).sqrt();
    Ok(MinimaxInterval {
        lo,
        hi,
        ordered: lo <= hi,
    })
}

/// Upper bound on the variance of team accuracy over `n` decisions.
pub fn variance_bound(e_star: f64, rho: f64, d_h: f64, d_m: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    let d_minus = d_h.min(d_m);
    if d_minus <= 0.0 {
        return Err(Error::UndefinedBound);
    }
    Ok(e_star * (1.0 - e_star) / n as f64 * (1.0 + rho * d_h * d_m / (d_minus * d_minus)))
}

/// K-class threshold `ρ*/√(K−1)`.
pub fn rho_star_k(rho_star_binary: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidClassCount { k });
    }
    if !(0.0..=1.0).contains(&rho_star_binary) {
        return Err(Error::invalid("rho_star_binary", format!("{rho_star_binary} outside [0, 1]")));
    }
    Ok(rho_star_binary / ((k - 1) as f64).sqrt())
}

/// Threshold under bounded miscalibration `ε`.
pub fn rho_star_miscal(rho_star: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::invalid("epsilon", format!("{epsilon} outside [0, 0.5]")));
    }
    Ok(rho_star * (1.0 - 2.0 * epsilon))
}

/// Inputs to [`BoundsReport::compute`]. Sensitivities come from the agents'
/// class means so `d₋` and `Δd` have a single source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsInput {
    pub a_h: f64,
    pub a_m: f64,
    pub d_h: f64,
    pub d_m: f64,
    pub rho_hm: f64,
    /// Decision count used for the variance bound.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub input: BoundsInput,
    pub a_star: f64,
    pub a_minus: f64,
    pub e_star: f64,
    pub d_minus: f64,
    pub delta_d: f64,
    pub rho_star: f64,
    pub rho_star_unclamped: f64,
    pub regime_flag: RegimeFlag,
    /// `ρ_HM < ρ*`.
    pub achievable: bool,
    pub kappa: f64,
    pub w_h: f64,
    pub w_m: f64,
    pub a_team_pred: f64,
    pub max_gain: f64,
    pub minimax_lo: f64,
    pub minimax_hi: f64,
    pub minimax_ordered: bool,
    /// `None` when `d₋ = 0`.
    pub var_bound: Option<f64>,
}

impl BoundsReport {
    pub fn compute(input: BoundsInput) -> Result<Self> {
        let BoundsInput {
            a_h,
            a_m,
            d_h,
            d_m,
            rho_hm,
            n,
        } = input;
        if !(rho_hm > -1.0 && rho_hm < 1.0) {
            return Err(Error::invalid("rho_hm", format!("{rho_hm} outside (-1, 1)")));
        }
        let threshold = rho_star(a_h, a_m)?;
        let a_star = a_h.max(a_m);
        let a_minus = a_h.min(a_m);
        let e_star = 1.0 - a_star;
        let d_minus = d_h.min(d_m);
        let delta_d = (d_h - d_m).abs();
        // Negative error correlation gets no correction.
        let kappa = kappa(rho_hm.max(0.0))?;
        let (w_h, w_m) = optimal_weights(d_h, d_m, rho_hm)?;
        let achievable = rho_hm < threshold.value;
        let a_team_pred = if achievable {
            optimal_team_accuracy(a_star, e_star, d_minus, rho_hm.max(0.0))?
        } else {
            a_star
        };
        let mm = minimax_interval(delta_d, e_star)?;
        let var_bound = match variance_bound(e_star, rho_hm, d_h, d_m, n) {
            Ok(v) => Some(v),
            Err(Error::UndefinedBound) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            input,
            a_star,
            a_minus,
            e_star,
            d_minus,
            delta_d,
            rho_star: threshold.value,
            rho_star_unclamped: threshold.unclamped,
            regime_flag: threshold.regime,
            achievable,
            kappa,
            w_h,
            w_m,
            a_team_pred,
            max_gain: max_gain(e_star, d_minus),
            minimax_lo: mm.lo,
            minimax_hi: mm.hi,
            minimax_ordered: mm.ordered,
            var_bound,
        })
    }

    /// Report for a simulated pair, with `ρ_HM` derived from its latent law.
    pub fn for_pair(cfg: &PairConfig, n: usize) -> Result<Self> {
        Self::compute(BoundsInput {
            a_h: cfg.accuracy_h(),
            a_m: cfg.accuracy_m(),
            d_h: cfg.agent_h.metacog_sensitivity(),
            d_m: cfg.agent_m.metacog_sensitivity(),
            rho_hm: cfg.error_correlation()?,
            n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn rho_star_examples() {
        let t = rho_star(0.5, 0.5).unwrap();
        assert_abs_diff_eq!(t.value, 0.5, epsilon = 1e-15);
        assert_eq!(t.regime, RegimeFlag::NearChanceValid);

        let t = rho_star(0.55, 0.55).unwrap();
        assert_abs_diff_eq!(t.value, 0.45 * 0.3025 / 0.2025, epsilon = 1e-12);
        assert_abs_diff_eq!(t.value, 0.6722, epsilon = 1e-4);
        assert_eq!(t.regime, RegimeFlag::NearChanceValid);

        let t = rho_star(0.8, 0.8).unwrap();
        assert_abs_diff_eq!(t.unclamped, 3.2, epsilon = 1e-12);
        assert_eq!(t.value, 1.0);
        assert_eq!(t.regime, RegimeFlag::Extrapolated);

        assert!(matches!(rho_star(1.0, 0.7), Err(Error::DegenerateAgent { .. })));
        assert!(matches!(rho_star(0.7, 0.0), Err(Error::DegenerateAgent { .. })));
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(kappa(0.5).unwrap(), SQRT_2 * 0.674_489_750_196_081_7, epsilon = 1e-13);
        assert_abs_diff_eq!(kappa(0.5).unwrap(), 0.9539, epsilon = 1e-4);
        assert_abs_diff_eq!(kappa(0.9).unwrap(), SQRT_2 * 1.644_853_626_951_472_7, epsilon = 1e-13);
        assert_abs_diff_eq!(kappa(0.9).unwrap(), 2.3262, epsilon = 1e-4);
        assert_eq!(kappa(1.0), Err(Error::UnboundedCorrection));
    }

    #[test]
    fn kappa_strictly_increasing() {
        let mut prev = kappa(0.0).unwrap();
        for i in 1..=1000 {
            let k = kappa(0.999 * f64::from(i) / 1000.0).unwrap();
            assert!(k > prev);
            prev = k;
        }
    }

    #[test]
    fn weight_examples() {
        let (a, b) = optimal_weights(1.3, 1.3, 0.0).unwrap();
        assert_abs_diff_eq!(a, 1.0 / SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(b, 1.0 / SQRT_2, epsilon = 1e-15);
        let (a, b) = optimal_weights(2.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(a, 2.0 / 5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(b, 1.0 / 5f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(
            optimal_weights(1.0, 1.0, 1.0),
            Err(Error::DegenerateWeights { .. })
        ));
        assert!(optimal_weights(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn team_accuracy_examples() {
        let v = optimal_team_accuracy(0.8, 0.2, 1.5, 0.0).unwrap();
        assert_abs_diff_eq!(v, 0.8 + 0.2 * normal::cdf(1.5 / SQRT_2), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.9711, epsilon = 1e-4);
        assert_abs_diff_eq!(optimal_team_accuracy(0.7, 0.3, 0.0, 0.0).unwrap(), 0.85, epsilon = 1e-15);
        let v = optimal_team_accuracy(0.7, 0.3, 1.0, 1.0 - 1e-15).unwrap();
        assert_abs_diff_eq!(v, 0.7, epsilon = 1e-6);
        assert_eq!(optimal_team_accuracy(0.7, 0.3, 1.0, 1.0), Err(Error::UnboundedCorrection));
    }

    #[test]
    fn max_gain_examples() {
        assert_abs_diff_eq!(max_gain(0.25, 1.0), 0.1901, epsilon = 1e-4);
        assert_eq!(max_gain(0.3, 0.0), 0.15);
        assert_eq!(max_gain(0.0, 2.0), 0.0);
    }

    #[test]
    fn minimax_examples() {
        let m = minimax_interval(0.0, 0.3).unwrap();
        assert_eq!((m.lo, m.hi), (0.0, 0.0));
        let m = minimax_interval(1.0, 0.3).unwrap();
        assert_abs_diff_eq!(m.lo, 1.0 / (2.0 * PI.sqrt() * SQRT_2), epsilon = 1e-15);
        assert_abs_diff_eq!(m.lo, 0.1995, epsilon = 1e-4);
        assert_abs_diff_eq!(m.hi, 0.4370, epsilon = 1e-4);
        assert!(m.ordered);
        let m = minimax_interval(0.5, 0.5).unwrap();
        assert_abs_diff_eq!(m.lo, 0.1262, epsilon = 1e-4);
        assert_abs_diff_eq!(m.hi, 0.3989, epsilon = 1e-4);
        // Tiny e* with large Δd: bounds cross and are flagged, not reordered.
        let m = minimax_interval(3.0, 0.001).unwrap();
        assert!(!m.ordered && m.lo > m.hi);
    }

    #[test]
    fn variance_examples() {
        assert_abs_diff_eq!(variance_bound(0.2, 0.0, 1.0, 2.0, 50).unwrap(), 0.16 / 50.0, epsilon = 1e-18);
        assert_abs_diff_eq!(variance_bound(0.2, 0.5, 1.0, 1.0, 100).unwrap(), 0.0024, epsilon = 1e-15);
        assert!(variance_bound(0.2, 0.5, 1.0, 1.0, 1_000_000_000).unwrap() < 1e-9);
        assert_eq!(variance_bound(0.2, 0.5, 0.0, 1.0, 10), Err(Error::UndefinedBound));
    }

    #[test]
    fn kclass_examples() {
        assert_eq!(rho_star_k(0.75, 2).unwrap(), 0.75);
        assert_abs_diff_eq!(rho_star_k(0.75, 10).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(rho_star_k(0.75, 16).unwrap(), 0.1936, epsilon = 1e-4);
        assert_eq!(rho_star_k(0.75, 1), Err(Error::InvalidClassCount { k: 1 }));
    }

    #[test]
    fn miscalibration_examples() {
        assert_eq!(rho_star_miscal(0.6, 0.0).unwrap(), 0.6);
        assert_eq!(rho_star_miscal(0.5, 0.25).unwrap(), 0.25);
        assert_eq!(rho_star_miscal(0.5, 0.5).unwrap(), 0.0);
        assert!(rho_star_miscal(0.5, 0.6).is_err());
    }

    #[test]
    fn report_for_symmetric_pair() {
        let r = BoundsReport::compute(BoundsInput {
            a_h: 0.5 + 1e-9,
            a_m: 0.5 + 1e-9,
            d_h: 1.0,
            d_m: 1.0,
            rho_hm: 0.3,
            n: 100,
        })
        .unwrap();
        assert_abs_diff_eq!(r.rho_star, 0.5, epsilon = 1e-6);
        assert!(r.achievable);
        assert_eq!(r.w_h, r.w_m);
        assert!(r.a_team_pred >= r.a_star);
        assert!(r.minimax_lo <= r.minimax_hi);
    }

    proptest! {
        #[test]
        fn rho_star_is_symmetric(a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let x = rho_star(a, b).unwrap();
            let y = rho_star(b, a).unwrap();
            prop_assert!((x.unclamped - y.unclamped).abs() < 1e-12);
            prop_assert_eq!(x.regime, y.regime);
        }

        #[test]
        fn corollary_consistency(e in 0.0f64..0.5, d in 0.0f64..4.0) {
            let a = 1.0 - e;
            let via_team = optimal_team_accuracy(a, e, d, 0.0).unwrap() - a;
            prop_assert!((max_gain(e, d) - via_team).abs() < 1e-12);
        }

        #[test]
        fn minimax_lower_zero_iff_no_difference(dd in 0.0f64..5.0, e in 0.0f64..1.0) {
            let m = minimax_interval(dd, e).unwrap();
            prop_assert_eq!(m.lo == 0.0, dd == 0.0);
        }

        #[test]
        fn variance_bound_monotone(
            e in 0.01f64..0.5, r1 in 0.0f64..0.9, dr in 0.001f64..0.1,
            dh in 0.1f64..3.0, dm in 0.1f64..3.0, n in 1usize..1000,
        ) {
            let v1 = variance_bound(e, r1, dh, dm, n).unwrap();
            prop_assert!(variance_bound(e, r1 + dr, dh, dm, n).unwrap() > v1);
            prop_assert!(variance_bound(e, r1, dh, dm, n + 1).unwrap() < v1);
        }

        #[test]
        fn team_prediction_dominates_when_achievable(
            a in 0.51f64..0.64, b in 0.51f64..0.64, dh in 0.1f64..3.0,
            dm in 0.1f64..3.0, rho in 0.0f64..0.95,
        ) {
            let r = BoundsReport::compute(BoundsInput { a_h: a, a_m: b, d_h: dh, d_m: dm, rho_hm: rho, n: 10 }).unwrap();
            if r.achievable {
                prop_assert!(r.a_team_pred >= a.max(b));
            }
            prop_assert!(r.w_h.is_finite() && r.w_m.is_finite());
        }
    }
}
