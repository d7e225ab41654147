//! Exact likelihood of confidence pairs given the label.
//!
//! With unit noise the confidence map `c = Φ(θ − τ)` is invertible, so each
//! trial yields the latent pair `θ = τ + Φ⁻¹(c)` exactly. The log-likelihood
//! is the bivariate normal log-density of `(θ_H, θ_M) | Y` plus the Jacobian
//! of the inverse map, and depends on the data only through six sums per
//! class.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::aggregation::CONFIDENCE_CLIP;
use crate::error::{Error, Result};
use crate::normal;
use crate::sdt::{AgentParams, PairConfig, TrialRecord};

/// Model parameters. Thresholds live on the confidence scale:
/// `tau = Φ(τ_latent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdtParams {
    pub d_h: f64,
    pub d_m: f64,
    pub rho_latent: f64,
    pub tau_h: f64,
    pub tau_m: f64,
}

pub const PARAM_NAMES: [&str; 5] = ["d_h", "d_m", "rho_latent", "tau_h", "tau_m"];

impl SdtParams {
    pub fn to_array(self) -> [f64; 5] {
        [self.d_h, self.d_m, self.rho_latent, self.tau_h, self.tau_m]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            d_h: a[0],
            d_m: a[1],
            rho_latent: a[2],
            tau_h: a[3],
            tau_m: a[4],
        }
    }

    pub fn agent_h(&self) -> Result<AgentParams> {
        AgentParams::canonical(self.d_h, normal::inv_cdf(self.tau_h))
    }

    pub fn agent_m(&self) -> Result<AgentParams> {
        AgentParams::canonical(self.d_m, normal::inv_cdf(self.tau_m))
    }

    pub fn pair(&self, class_prior: f64) -> Result<PairConfig> {
        PairConfig::with_prior(self.agent_h()?, self.agent_m()?, self.rho_latent, class_prior)
    }

    /// Binary error correlation implied by the parameters.
    pub fn error_correlation(&self, class_prior: f64) -> Result<f64> {
        self.pair(class_prior)?.error_correlation()
    }
}

/// Per-class sums of `z = Φ⁻¹(c)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub n: f64,
    pub sh: f64,
    pub sm: f64,
    pub shh: f64,
    pub smm: f64,
    pub shm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// Index 0 for `Y = 0`, 1 for `Y = 1`.
    pub classes: [ClassStats; 2],
    /// `−Σ log φ(z)` over both agents: log-Jacobian of the inverse map.
    pub log_jacobian: f64,
    pub n: usize,
    /// Records whose prediction contradicts their confidence.
    pub rejected: usize,
    pub h_errors: usize,
    pub m_errors: usize,
}

/// `Φ⁻¹` of a class-1 confidence after clipping away exact 0 and 1.
pub fn latent_z(c: f64) -> f64 {
    normal::inv_cdf(c.clamp(CONFIDENCE_CLIP, 1.0 - CONFIDENCE_CLIP))
}

/// A record is consistent when `ŷ = 1[c > 1/2]`.
pub fn consistent(t: &TrialRecord) -> bool {
    (t.yhat_h == 1) == (t.conf_h > 0.5) && (t.yhat_m == 1) == (t.conf_m > 0.5)
}

impl SufficientStats {
    pub fn from_trials(trials: &[TrialRecord]) -> Result<Self> {
        let mut s = SufficientStats {
            classes: [ClassStats::default(); 2],
            log_jacobian: 0.0,
            n: 0,
            rejected: 0,
            h_errors: 0,
            m_errors: 0,
        };
        for t in trials {
            if t.y > 1 || t.yhat_h > 1 || t.yhat_m > 1 {
                return Err(Error::Malformed(format!("non-binary label in {t:?}")));
            }
            if !consistent(t) {
                s.rejected += 1;
                continue;
            }
            let (zh, zm) = (latent_z(t.conf_h), latent_z(t.conf_m));
            let c = &mut s.classes[usize::from(t.y)];
            c.n += 1.0;
            c.sh += zh;
            c.sm += zm;
            c.shh += zh * zh;
            c.smm += zm * zm;
            c.shm += zh * zm;
            s.log_jacobian += (2.0 * PI).ln() + 0.5 * (zh * zh + zm * zm);
            s.n += 1;
            s.h_errors += usize::from(!t.h_correct());
            s.m_errors += usize::from(!t.m_correct());
        }
        Ok(s)
    }

    pub fn class_one_rate(&self) -> f64 {
        self.classes[1].n / self.n as f64
    }
}

/// Residual offsets: `θ − μ_y = z − m` with `m = s·d/2 − τ_latent`.
fn offsets(p: &SdtParams, y: usize) -> (f64, f64) {
    let s = if y == 1 { 0.5 } else { -0.5 };
    (s * p.d_h - normal::inv_cdf(p.tau_h), s * p.d_m - normal::inv_cdf(p.tau_m))
}

/// Total log-likelihood. Returns `-inf` outside the parameter domain.
pub fn log_likelihood(p: &SdtParams, s: &SufficientStats) -> f64 {
    let r = p.rho_latent;
    if !(r.abs() < 1.0 && p.tau_h > 0.0 && p.tau_h < 1.0 && p.tau_m > 0.0 && p.tau_m < 1.0) {
        return f64::NEG_INFINITY;
    }
    let one_m = 1.0 - r * r;
    let mut ll = -(s.n as f64) * ((2.0 * PI).ln() + 0.5 * one_m.ln());
    for (y, c) in s.classes.iter().enumerate() {
        if c.n == 0.0 {
            continue;
        }
        let (mh, mm) = offsets(p, y);
        // Σ (z_h − m_h)², Σ (z_m − m_m)², Σ (z_h − m_h)(z_m − m_m)
        let uhh = c.shh - 2.0 * mh * c.sh + c.n * mh * mh;
        let umm = c.smm - 2.0 * mm * c.sm + c.n * mm * mm;
        let uhm = c.shm - mm * c.sh - mh * c.sm + c.n * mh * mm;
        ll -= (uhh - 2.0 * r * uhm + umm) / (2.0 * one_m);
    }
    ll + s.log_jacobian
}

/// Log-likelihood of one trial (no consistency check).
pub fn trial_log_likelihood(p: &SdtParams, t: &TrialRecord) -> f64 {
    let (zh, zm) = (latent_z(t.conf_h), latent_z(t.conf_m));
    let (mh, mm) = offsets(p, usize::from(t.y));
    let dens = normal::bivariate_pdf(zh - mh, zm - mm, p.rho_latent);
    dens.ln() - normal::pdf(zh).ln() - normal::pdf(zm).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use crate::rng::chunk_rng;
    use crate::sdt::simulate_trials;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// `log` of the confidence-space density from the probability of a small
    /// box, integrated one-dimensionally over the conditional normal.
    fn box_log_density(p: &SdtParams, t: &TrialRecord, h: f64) -> f64 {
        let (mh, mm) = offsets(p, usize::from(t.y));
        let r = p.rho_latent;
        let s = (1.0 - r * r).sqrt();
        // Box in standardised residual space.
        let a = latent_z(t.conf_h - h) - mh;
        let b = latent_z(t.conf_h + h) - mh;
        let lo = latent_z(t.conf_m - h) - mm;
        let hi = latent_z(t.conf_m + h) - mm;
        let inner = |x: f64| {
            let (u, v) = ((lo - r * x) / s, (hi - r * x) / s);
            // Difference of upper tails is better conditioned for large arguments.
            let diff = if u > 0.0 {
                normal::cdf(-u) - normal::cdf(-v)
            } else {
                normal::cdf(v) - normal::cdf(u)
            };
            normal::pdf(x) * diff
        };
        let scale = (b - a) * inner(0.5 * (a + b));
        let mass = quad::integrate(inner, a, b, 1e-10 * scale).value;
        (mass / (4.0 * h * h)).ln()
    }

    #[test]
    fn per_trial_likelihood_matches_box_integration() {
        let mut rng = chunk_rng(17, 0, 0);
        for _ in 0..100 {
            let p = SdtParams {
                d_h: rng.random_range(0.2..2.5),
                d_m: rng.random_range(0.2..2.5),
                rho_latent: rng.random_range(-0.8..0.9),
                tau_h: rng.random_range(0.3..0.7),
                tau_m: rng.random_range(0.3..0.7),
            };
            let c_h: f64 = rng.random_range(0.05..0.95);
            let c_m: f64 = rng.random_range(0.05..0.95);
            let t = TrialRecord {
                y: u8::from(rng.random::<bool>()),
                yhat_h: u8::from(c_h > 0.5),
                yhat_m: u8::from(c_m > 0.5),
                conf_h: c_h,
                conf_m: c_m,
            };
            let oracle = box_log_density(&p, &t, 2e-6);
            assert_abs_diff_eq!(trial_log_likelihood(&p, &t), oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn sufficient_statistics_sum_trial_terms() {
        let p = SdtParams {
            d_h: 1.5,
            d_m: 1.0,
            rho_latent: 0.3,
            tau_h: 0.5,
            tau_m: 0.45,
        };
        let cfg = p.pair(0.5).unwrap();
        let trials = simulate_trials(&cfg, 3000, 2);
        let stats = SufficientStats::from_trials(&trials).unwrap();
        assert_eq!(stats.rejected, 0);
        let q = SdtParams {
            d_h: 1.2,
            rho_latent: -0.2,
            tau_m: 0.6,
            ..p
        };
        for params in [p, q] {
            let direct: f64 = trials.iter().map(|t| trial_log_likelihood(&params, t)).sum();
            assert_abs_diff_eq!(log_likelihood(&params, &stats), direct, epsilon = 1e-7 * direct.abs());
        }
        assert!(log_likelihood(&p, &stats) > log_likelihood(&q, &stats));
    }

    #[test]
    fn contradictory_records_are_rejected() {
        let good = TrialRecord::new(1, 1, 0, 0.8, 0.3).unwrap();
        let bad = TrialRecord::new(1, 0, 0, 0.8, 0.3).unwrap();
        let s = SufficientStats::from_trials(&[good, bad, good]).unwrap();
        assert_eq!((s.n, s.rejected), (2, 1));
    }
}
