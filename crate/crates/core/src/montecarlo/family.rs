//! Confidence-generating families used by the robustness checks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quad;
use crate::sdt::{AgentParams, LatentTrial, PairConfig, TrialRecord, TrialSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[default]
    Gaussian,
    Lognormal,
    Beta,
    /// Resampling of an observed trial log; needs input data.
    EmpiricalResample,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Lognormal => "lognormal",
            Family::Beta => "beta",
            Family::EmpiricalResample => "empirical-resample",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "lognormal" => Ok(Family::Lognormal),
            "beta" => Ok(Family::Beta),
            "empirical" | "empirical-resample" => Ok(Family::EmpiricalResample),
            _ => Err(Error::invalid(
                "family",
                format!("unknown family `{s}` (gaussian|lognormal|beta|empirical)"),
            )),
        }
    }
}

/// Shape parameter shared by the correct and incorrect Beta laws.
pub const BETA_SHARED_SHAPE: f64 = 2.0;

/// `(E[c̃ | correct], E[c̃ | incorrect])` for the folded Gaussian-channel
/// confidence `c̃ = Φ(|θ − τ|/σ)`.
pub fn expected_self_confidence(p: &AgentParams, prior: f64) -> (f64, f64) {
    let s = p.sigma;
    let dens = |theta: f64, mu: f64| normal::pdf((theta - mu) / s) / s;
    let fold = |theta: f64| normal::cdf((theta - p.tau).abs() / s);
    let span = 12.0 * s;
    let lo = p.mu0.min(p.mu1) - span;
    let hi = p.mu0.max(p.mu1) + span;
    let tau = p.tau.clamp(lo, hi);
    let tol = 1e-12;
    let above = |mu: f64| quad::integrate(|t| fold(t) * dens(t, mu), tau, hi, tol).value;
    let below = |mu: f64| quad::integrate(|t| fold(t) * dens(t, mu), lo, tau, tol).value;
    let acc = p.implied_accuracy(prior);
    let correct = prior * above(p.mu1) + (1.0 - prior) * below(p.mu0);
    let incorrect = prior * below(p.mu1) + (1.0 - prior) * above(p.mu0);
    (correct / acc, incorrect / (1.0 - acc))
}

#[derive(Debug, Clone, Copy)]
struct LognormalChannel {
    shift: f64,
    // (log-mean, log-sd) for Y = 0 and Y = 1
    params: [(f64, f64); 2],
}

impl LognormalChannel {
    /// Log-normal latent with the same class means and variance as the
    /// Gaussian channel, shifted to keep the support below every mean.
    fn new(p: &AgentParams) -> Self {
        let shift = 4.0 * p.sigma + p.mu0.abs().max(p.mu1.abs());
        let var = p.sigma * p.sigma;
        let mk = |mu: f64| {
            let mean = mu + shift;
            let s2 = (1.0 + var / (mean * mean)).ln();
            (mean.ln() - 0.5 * s2, s2.sqrt())
        };
        Self {
            shift,
            params: [mk(p.mu0), mk(p.mu1)],
        }
    }

    fn theta(&self, y: u8, z: f64) -> f64 {
        let (m, s) = self.params[usize::from(y)];
        (m + s * z).exp() - self.shift
    }
}

#[derive(Debug, Clone, Copy)]
struct BetaChannel {
    correct: Beta<f64>,
    incorrect: Beta<f64>,
}

impl BetaChannel {
    fn new(p: &AgentParams, prior: f64) -> Result<Self> {
        let (ec, ei) = expected_self_confidence(p, prior);
        let shape = |e: f64| -> Result<Beta<f64>> {
            // c̃ = 0.5 + 0.5·B, so E[B] = 2E[c̃] − 1.
            let m = (2.0 * e - 1.0).clamp(1e-6, 1.0 - 1e-6);
            let alpha = m * BETA_SHARED_SHAPE / (1.0 - m);
            Beta::new(alpha, BETA_SHARED_SHAPE)
                .map_err(|e| Error::invalid("beta", e.to_string()))
        };
        Ok(Self {
            correct: shape(ec)?,
            incorrect: shape(ei)?,
        })
    }

    fn confidence<R: Rng + ?Sized>(&self, yhat: u8, correct: bool, rng: &mut R) -> f64 {
        let b = if correct {
            self.correct.sample(rng)
        } else {
            self.incorrect.sample(rng)
        };
        let folded = 0.5 + 0.5 * b;
        if yhat == 1 {
            folded
        } else {
            1.0 - folded
        }
    }
}

/// Trial generator for one family.
#[derive(Debug, Clone)]
pub struct FamilySampler {
    base: TrialSampler,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Gaussian,
    Lognormal([LognormalChannel; 2]),
    Beta([BetaChannel; 2]),
}

impl FamilySampler {
    pub fn new(cfg: PairConfig, family: Family) -> Result<Self> {
        let kind = match family {
            Family::Gaussian => Kind::Gaussian,
            Family::Lognormal => Kind::Lognormal([
                LognormalChannel::new(&cfg.agent_h),
                LognormalChannel::new(&cfg.agent_m),
            ]),
            Family::Beta => Kind::Beta([
                BetaChannel::new(&cfg.agent_h, cfg.class_prior)?,
                BetaChannel::new(&cfg.agent_m, cfg.class_prior)?,
            ]),
            Family::EmpiricalResample => {
                return Err(Error::Precondition(
                    "the empirical family resamples an input trial log".into(),
                ))
            }
        };
        Ok(Self {
            base: TrialSampler::new(cfg),
            kind,
        })
    }

    pub fn config(&self) -> &PairConfig {
        self.base.config()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialRecord {
        let l: LatentTrial = self.base.draw_latent(rng);
        match &self.kind {
            Kind::Gaussian => self.base.record(&l),
            Kind::Lognormal(ch) => {
                let cfg = self.base.config();
                let (h, m) = (&cfg.agent_h, &cfg.agent_m);
                let th = ch[0].theta(l.y, l.z_h);
                let tm = ch[1].theta(l.y, l.z_m);
                TrialRecord {
                    y: l.y,
                    yhat_h: u8::from(th > h.tau),
                    yhat_m: u8::from(tm > m.tau),
                    conf_h: h.confidence_of(th),
                    conf_m: m.confidence_of(tm),
                }
            }
            Kind::Beta(ch) => {
                // Predictions from the Gaussian channel; confidences replaced.
                let mut t = self.base.record(&l);
                t.conf_h = ch[0].confidence(t.yhat_h, t.h_correct(), rng);
                t.conf_m = ch[1].confidence(t.yhat_m, t.m_correct(), rng);
                t
            }
        }
    }
}
