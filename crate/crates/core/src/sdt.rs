//! Generative signal-detection model for a pair of agents.
//!
//! Each agent `i` observes a latent `θ_i | Y=y ~ N(μ_y, σ²)`, predicts
//! `1[θ_i > τ_i]` and reports confidence `Φ((θ_i - τ_i)/σ)` in class 1. The
//! two latents share one correlation parameter given `Y`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::rng;

/// Default `P(Y = 1)`.
pub const DEFAULT_PRIOR: f64 = 0.5;

/// Stream domain for [`simulate_trials`].
const SIM_DOMAIN: u64 = 0x5344545f53494d;

/// Tolerance for [`calibrate_latent_correlation`].
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;

/// One agent's signal-detection channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl AgentParams {
    pub fn new(mu0: f64, mu1: f64, sigma: f64, tau: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("{sigma} must be finite and > 0")));
        }
        if !(mu0.is_finite() && mu1.is_finite()) {
            return Err(Error::invalid("mu", "class means must be finite"));
        }
        if mu1 < mu0 {
            return Err(Error::invalid("mu", format!("mu1 = {mu1} < mu0 = {mu0}")));
        }
        if tau.is_nan() {
            return Err(Error::invalid("tau", "NaN threshold"));
        }
        Ok(Self { mu0, mu1, sigma, tau })
    }

    /// Unit-noise agent with means `∓d/2` and latent threshold `tau`.
    pub fn canonical(d: f64, tau: f64) -> Result<Self> {
        if !(d.is_finite() && d >= 0.0) {
            return Err(Error::invalid("d", format!("{d} must be finite and >= 0")));
        }
        Self::new(-0.5 * d, 0.5 * d, 1.0, tau)
    }

    /// Canonical agent with sensitivity `d` whose threshold `tau >= 0` is
    /// chosen so that the accuracy at prior 0.5 equals `accuracy`.
    pub fn with_accuracy(d: f64, accuracy: f64) -> Result<Self> {
        let top = normal::cdf(0.5 * d);
        if !(accuracy > 0.5 && accuracy <= top) {
            if d == 0.0 && accuracy == 0.5 {
                return Self::canonical(0.0, 0.0);
            }
            return Err(Error::invalid(
                "accuracy",
                format!("{accuracy} unreachable with d = {d}; need (0.5, {top:.6}]"),
            ));
        }
        let acc = |tau: f64| 0.5 * normal::cdf(0.5 * d - tau) + 0.5 * normal::cdf(tau + 0.5 * d);
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while acc(hi) > accuracy {
            hi *= 2.0;
            if hi > 1e3 {
                break;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if acc(mid) > accuracy {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Self::canonical(d, 0.5 * (lo + hi))
    }

    /// `(mu1 - mu0) / sigma`.
    pub fn metacog_sensitivity(&self) -> f64 {
        (self.mu1 - self.mu0) / self.sigma
    }

    /// Accuracy of the rule `1[θ > τ]`.
    pub fn implied_accuracy(&self, class_prior: f64) -> f64 {
        class_prior * normal::cdf((self.mu1 - self.tau) / self.sigma)
            + (1.0 - class_prior) * normal::cdf((self.tau - self.mu0) / self.sigma)
    }

    /// Confidence in class 1 for latent `theta`.
    pub fn confidence_of(&self, theta: f64) -> f64 {
        normal::cdf((theta - self.tau) / self.sigma)
    }

    pub fn mean(&self, y: u8) -> f64 {
        if y == 1 {
            self.mu1
        } else {
            self.mu0
        }
    }
}

pub fn metacog_sensitivity(p: &AgentParams) -> f64 {
    p.metacog_sensitivity()
}

pub fn implied_accuracy(p: &AgentParams, class_prior: f64) -> f64 {
    p.implied_accuracy(class_prior)
}

pub fn confidence_of(theta: f64, p: &AgentParams) -> f64 {
    p.confidence_of(theta)
}

/// A decision event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub y: u8,
    pub yhat_h: u8,
    pub yhat_m: u8,
    pub conf_h: f64,
    pub conf_m: f64,
}

impl TrialRecord {
    pub fn new(y: u8, yhat_h: u8, yhat_m: u8, conf_h: f64, conf_m: f64) -> Result<Self> {
        for (name, c) in [("conf_h", conf_h), ("conf_m", conf_m)] {
            if !(c.is_finite() && (0.0..=1.0).contains(&c)) {
                return Err(Error::invalid(name, format!("{c} outside [0, 1]")));
            }
        }
        Ok(Self {
            y,
            yhat_h,
            yhat_m,
            conf_h,
            conf_m,
        })
    }

    pub fn h_correct(&self) -> bool {
        self.yhat_h == self.y
    }

    pub fn m_correct(&self) -> bool {
        self.yhat_m == self.y
    }

    pub fn agree(&self) -> bool {
        self.yhat_h == self.yhat_m
    }
}

/// Two agents plus their joint latent law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub agent_h: AgentParams,
    pub agent_m: AgentParams,
    pub latent_corr: f64,
    pub class_prior: f64,
}

impl PairConfig {
    pub fn new(agent_h: AgentParams, agent_m: AgentParams, latent_corr: f64) -> Result<Self> {
        Self::with_prior(agent_h, agent_m, latent_corr, DEFAULT_PRIOR)
    }

    pub fn with_prior(
        agent_h: AgentParams,
        agent_m: AgentParams,
        latent_corr: f64,
        class_prior: f64,
    ) -> Result<Self> {
        if !(latent_corr.abs() < 1.0) {
            return Err(Error::invalid(
                "latent_corr",
                format!("{latent_corr} must lie in (-1, 1)"),
            ));
        }
        if !(class_prior > 0.0 && class_prior < 1.0) {
            return Err(Error::invalid(
                "class_prior",
                format!("{class_prior} must lie in (0, 1)"),
            ));
        }
        Ok(Self {
            agent_h,
            agent_m,
            latent_corr,
            class_prior,
        })
    }

    /// Pair whose binary error correlation equals `target_rho`.
    pub fn with_error_correlation(
        agent_h: AgentParams,
        agent_m: AgentParams,
        target_rho: f64,
        class_prior: f64,
    ) -> Result<Self> {
        let r = calibrate_with_prior(target_rho, &agent_h, &agent_m, class_prior)?;
        Self::with_prior(agent_h, agent_m, r, class_prior)
    }

    pub fn accuracy_h(&self) -> f64 {
        self.agent_h.implied_accuracy(self.class_prior)
    }

    pub fn accuracy_m(&self) -> f64 {
        self.agent_m.implied_accuracy(self.class_prior)
    }

    pub fn error_h(&self) -> f64 {
        1.0 - self.accuracy_h()
    }

    pub fn error_m(&self) -> f64 {
        1.0 - self.accuracy_m()
    }

    pub fn joint_error_prob(&self) -> Result<f64> {
        joint_error_at(&self.agent_h, &self.agent_m, self.latent_corr, self.class_prior)
    }

    pub fn error_correlation(&self) -> Result<f64> {
        error_correlation_at(&self.agent_h, &self.agent_m, self.latent_corr, self.class_prior)
    }

    /// Probability that the two predictions differ.
    pub fn disagreement_prob(&self) -> Result<f64> {
        Ok(self.error_h() + self.error_m() - 2.0 * self.joint_error_prob()?)
    }
}

fn joint_error_at(h: &AgentParams, m: &AgentParams, r: f64, prior: f64) -> Result<f64> {
    // Y = 1: both err when θ <= τ, i.e. z <= (τ - μ1)/σ.
    let p1 = normal::bivariate_cdf(
        (h.tau - h.mu1) / h.sigma,
        (m.tau - m.mu1) / m.sigma,
        r,
    )?;
    // Y = 0: both err when θ > τ.
    let p0 = normal::bivariate_upper(
        (h.tau - h.mu0) / h.sigma,
        (m.tau - m.mu0) / m.sigma,
        r,
    )?;
    Ok(prior * p1 + (1.0 - prior) * p0)
}

fn error_correlation_at(h: &AgentParams, m: &AgentParams, r: f64, prior: f64) -> Result<f64> {
    let e_h = 1.0 - h.implied_accuracy(prior);
    let e_m = 1.0 - m.implied_accuracy(prior);
    for e in [e_h, e_m] {
        if e <= 0.0 || e >= 1.0 {
            return Err(Error::UndefinedCorrelation { error_rate: e });
        }
    }
    let joint = joint_error_at(h, m, r, prior)?;
    Ok(((joint - e_h * e_m) / (e_h * (1.0 - e_h) * e_m * (1.0 - e_m)).sqrt()).clamp(-1.0, 1.0))
}

pub fn joint_error_prob(cfg: &PairConfig) -> Result<f64> {
    cfg.joint_error_prob()
}

pub fn error_correlation(cfg: &PairConfig) -> Result<f64> {
    cfg.error_correlation()
}

/// `P(E_H, E_M)` reconstructed from the marginal error rates and the binary
/// error correlation.
pub fn joint_error_from_correlation(e_h: f64, e_m: f64, rho: f64) -> f64 {
    e_h * e_m + rho * (e_h * (1.0 - e_h) * e_m * (1.0 - e_m)).sqrt()
}

/// Upper Fréchet bound on the correlation of two Bernoulli indicators.
pub fn frechet_max_correlation(e_h: f64, e_m: f64) -> f64 {
    let (lo, hi) = if e_h <= e_m { (e_h, e_m) } else { (e_m, e_h) };
    (lo * (1.0 - hi) / (hi * (1.0 - lo))).sqrt()
}

/// Range of binary error correlation reachable by varying the latent
/// correlation over `[-1, 1]`.
pub fn achievable_error_correlation(h: &AgentParams, m: &AgentParams, prior: f64) -> Result<(f64, f64)> {
    Ok((
        error_correlation_at(h, m, -1.0, prior)?,
        error_correlation_at(h, m, 1.0, prior)?,
    ))
}

/// Latent correlation whose induced binary error correlation is `target_rho`,
/// at the default class prior.
pub fn calibrate_latent_correlation(target_rho: f64, h: &AgentParams, m: &AgentParams) -> Result<f64> {
    calibrate_with_prior(target_rho, h, m, DEFAULT_PRIOR)
}

pub fn calibrate_with_prior(
    target_rho: f64,
    h: &AgentParams,
    m: &AgentParams,
    prior: f64,
) -> Result<f64> {
    if !target_rho.is_finite() {
        return Err(Error::invalid("target_rho", "not finite"));
    }
    let (lo_rho, hi_rho) = achievable_error_correlation(h, m, prior)?;
    let infeasible = || Error::InfeasibleCorrelation {
        target: target_rho,
        lo: lo_rho,
        hi: hi_rho,
    };
    if target_rho < lo_rho - CALIBRATION_TOLERANCE || target_rho > hi_rho + CALIBRATION_TOLERANCE {
        return Err(infeasible());
    }
    let f = |r: f64| error_correlation_at(h, m, r, prior).map(|v| v - target_rho);
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut r = 0.0;
    for _ in 0..200 {
        r = 0.5 * (lo + hi);
        let v = f(r)?;
        if v.abs() <= 0.1 * CALIBRATION_TOLERANCE {
            break;
        }
        if v < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let r = r.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    if f(r)?.abs() > CALIBRATION_TOLERANCE {
        return Err(infeasible());
    }
    Ok(r)
}

/// Precomputed sampler for one pair.
#[derive(Debug, Clone, Copy)]
pub struct TrialSampler {
    cfg: PairConfig,
    cross: f64,
}

/// Trial together with the latent draws that produced it.
#[derive(Debug, Clone, Copy)]
pub struct LatentTrial {
    pub y: u8,
    /// Standard-normal noise of H and M (correlated).
    pub z_h: f64,
    pub z_m: f64,
}

impl TrialSampler {
    pub fn new(cfg: PairConfig) -> Self {
        let r = cfg.latent_corr;
        Self {
            cfg,
            cross: (1.0 - r * r).sqrt(),
        }
    }

    pub fn config(&self) -> &PairConfig {
        &self.cfg
    }

    pub fn draw_latent<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentTrial {
        let y = u8::from(rng.random::<f64>() < self.cfg.class_prior);
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        LatentTrial {
            y,
            z_h: z1,
            z_m: self.cfg.latent_corr * z1 + self.cross * z2,
        }
    }

    /// Gaussian-channel trial from latent noise.
    pub fn record(&self, l: &LatentTrial) -> TrialRecord {
        let (h, m) = (&self.cfg.agent_h, &self.cfg.agent_m);
        let th = h.mean(l.y) + h.sigma * l.z_h;
        let tm = m.mean(l.y) + m.sigma * l.z_m;
        TrialRecord {
            y: l.y,
            yhat_h: u8::from(th > h.tau),
            yhat_m: u8::from(tm > m.tau),
            conf_h: h.confidence_of(th),
            conf_m: m.confidence_of(tm),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialRecord {
        let l = self.draw_latent(rng);
        self.record(&l)
    }
}

/// Simulates `n` trials. The output depends only on `(cfg, n, seed)`.
pub fn simulate_trials(cfg: &PairConfig, n: usize, seed: u64) -> Vec<TrialRecord> {
    simulate_stream(cfg, n, seed, SIM_DOMAIN)
}

pub(crate) fn simulate_stream(cfg: &PairConfig, n: usize, seed: u64, domain: u64) -> Vec<TrialRecord> {
    let sampler = TrialSampler::new(*cfg);
    rng::map_chunks(n, |chunk, range| {
        let mut rng = rng::chunk_rng(seed, domain, chunk);
        range.map(|_| sampler.sample(&mut rng)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sym(d: f64) -> AgentParams {
        AgentParams::canonical(d, 0.0).unwrap()
    }

    #[test]
    fn sensitivity_examples() {
        assert_eq!(AgentParams::new(0.0, 0.0, 1.0, 0.0).unwrap().metacog_sensitivity(), 0.0);
        assert_eq!(AgentParams::new(0.0, 2.0, 1.0, 0.0).unwrap().metacog_sensitivity(), 2.0);
        let p = AgentParams::new(-0.5, 1.0, 0.75, 0.0).unwrap();
        assert_abs_diff_eq!(p.metacog_sensitivity(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn accuracy_examples() {
        let p = AgentParams::new(-1.0, 1.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(p.implied_accuracy(0.5), 0.841_344_746_068_542_9, epsilon = 1e-14);
        assert_eq!(sym(0.0).implied_accuracy(0.5), 0.5);
        let p = AgentParams::new(-1.0, 1.0, 1.0, f64::INFINITY).unwrap();
        assert_eq!(p.implied_accuracy(0.5), 0.5);
    }

    #[test]
    fn confidence_examples() {
        let p = sym(1.0);
        assert_eq!(p.confidence_of(p.tau), 0.5);
        assert_abs_diff_eq!(p.confidence_of(1.0), 0.841_344_746_068_542_9, epsilon = 1e-14);
        assert_abs_diff_eq!(p.confidence_of(-2.0), 0.022_750_131_948_179_2, epsilon = 1e-14);
    }

    #[test]
    fn rejects_invalid_agents() {
        assert!(AgentParams::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(AgentParams::new(1.0, 0.0, 1.0, 0.0).is_err());
        assert!(AgentParams::canonical(-1.0, 0.0).is_err());
        let a = sym(1.0);
        assert!(PairConfig::new(a, a, 1.0).is_err());
        assert!(PairConfig::with_prior(a, a, 0.0, 0.0).is_err());
    }

    #[test]
    fn with_accuracy_hits_target() {
        for &(d, a) in &[(1.0, 0.6), (2.0, 0.8), (0.5, 0.55), (1.0, normal::cdf(0.5))] {
            let p = AgentParams::with_accuracy(d, a).unwrap();
            assert_abs_diff_eq!(p.implied_accuracy(0.5), a, epsilon = 1e-12);
            assert!(p.tau >= 0.0);
        }
        assert!(AgentParams::with_accuracy(1.0, 0.8).is_err());
    }

    #[test]
    fn joint_error_independent_is_product() {
        let a = sym(1.3);
        let b = AgentParams::canonical(0.7, 0.2).unwrap();
        let cfg = PairConfig::new(a, b, 0.0).unwrap();
        // Within each class the errors are independent, so the joint is a
        // prior-weighted product of the class-conditional error rates.
        let e1 = |p: &AgentParams| normal::cdf((p.tau - p.mu1) / p.sigma);
        let e0 = |p: &AgentParams| 1.0 - normal::cdf((p.tau - p.mu0) / p.sigma);
        let expected = 0.5 * e1(&a) * e1(&b) + 0.5 * e0(&a) * e0(&b);
        assert_abs_diff_eq!(cfg.joint_error_prob().unwrap(), expected, epsilon = 1e-12);
        // Symmetric thresholds at the midline make the class-conditional error
        // rates equal, so the correlation is exactly 0.
        let cfg = PairConfig::new(sym(1.0), sym(2.0), 0.0).unwrap();
        assert_abs_diff_eq!(cfg.error_correlation().unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_examples() {
        assert_abs_diff_eq!(joint_error_from_correlation(0.2, 0.2, 0.0), 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(joint_error_from_correlation(0.2, 0.2, 0.5), 0.12, epsilon = 1e-15);
    }

    #[test]
    fn near_perfect_latent_correlation_gives_coincident_errors() {
        let a = AgentParams::canonical(2.0 * normal::inv_cdf(0.8), 0.0).unwrap();
        let cfg = PairConfig::new(a, a, 0.99).unwrap();
        let joint = cfg.joint_error_prob().unwrap();
        assert!((joint - 0.2).abs() < 0.02, "{joint}");
        let cfg = PairConfig::new(a, a, 1.0 - 1e-12).unwrap();
        assert_abs_diff_eq!(cfg.error_correlation().unwrap(), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn error_correlation_rejects_degenerate_marginals() {
        let perfect = AgentParams::new(-50.0, 50.0, 1.0, 0.0).unwrap();
        let cfg = PairConfig::new(perfect, sym(1.0), 0.3).unwrap();
        assert!(matches!(
            cfg.error_correlation(),
            Err(Error::UndefinedCorrelation { .. })
        ));
    }

    #[test]
    fn calibration_examples() {
        let a = sym(1.0);
        assert_abs_diff_eq!(calibrate_latent_correlation(0.0, &a, &a).unwrap(), 0.0, epsilon = 1e-9);
        let r = calibrate_latent_correlation(0.5, &a, &a).unwrap();
        assert!(r > 0.0 && r < 1.0);
        let cfg = PairConfig::new(a, a, r).unwrap();
        assert_abs_diff_eq!(cfg.error_correlation().unwrap(), 0.5, epsilon = CALIBRATION_TOLERANCE);
    }

    #[test]
    fn calibration_reports_infeasible_target() {
        // e_H = 0.1, e_M = 0.4: Fréchet bound sqrt(0.1*0.6/(0.4*0.9)) ≈ 0.408.
        let h = AgentParams::canonical(2.0 * normal::inv_cdf(0.9), 0.0).unwrap();
        let m = AgentParams::canonical(2.0 * normal::inv_cdf(0.6), 0.0).unwrap();
        let bound = frechet_max_correlation(0.1, 0.4);
        assert_abs_diff_eq!(bound, (0.06f64 / 0.36).sqrt(), epsilon = 1e-12);
        match calibrate_latent_correlation(0.99, &h, &m) {
            Err(Error::InfeasibleCorrelation { hi, .. }) => assert!(hi <= bound + 1e-9),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = PairConfig::new(sym(1.0), sym(1.5), 0.3).unwrap();
        let a = simulate_trials(&cfg, 10_000, 42);
        let b = simulate_trials(&cfg, 10_000, 42);
        assert_eq!(a, b);
        let c = simulate_trials(&cfg, 10_000, 43);
        assert_ne!(a, c);
        // A prefix run reproduces the same leading trials.
        let p = simulate_trials(&cfg, 5_000, 42);
        assert_eq!(&a[..5_000], &p[..]);
    }

    #[test]
    fn simulated_predictions_match_confidences() {
        let cfg = PairConfig::new(sym(1.0), AgentParams::canonical(2.0, 0.4).unwrap(), -0.2).unwrap();
        for t in simulate_trials(&cfg, 2_000, 1) {
            assert_eq!(t.yhat_h == 1, t.conf_h > 0.5);
            assert_eq!(t.yhat_m == 1, t.conf_m > 0.5);
        }
    }
}
