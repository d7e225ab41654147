//! Aggregation rules over `(Ŷ_H, Ŷ_M, c_H, c_M)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::rng::TieBreak;
use crate::sdt::{AgentParams, PairConfig, TrialRecord};

/// Confidences are clipped to `[CLIP, 1 − CLIP]` before `Φ⁻¹`.
pub const CONFIDENCE_CLIP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    H,
    M,
}

/// How confidences in a record are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceScale {
    /// Confidence that the label is 1 (binary records); folded to
    /// `max(c, 1 − c)` before comparison.
    #[default]
    ClassOne,
    /// Confidence in the agent's own prediction (K-class records).
    SelfReport,
}

impl ConfidenceScale {
    pub fn self_confidence(self, c: f64) -> f64 {
        match self {
            ConfidenceScale::ClassOne => c.max(1.0 - c),
            ConfidenceScale::SelfReport => c,
        }
    }
}

/// Posterior decision under the joint Gaussian model. The log-odds of `Y = 1`
/// are affine in `(θ_H, θ_M)`; the coefficients are precomputed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesModel {
    pub agent_h: AgentParams,
    pub agent_m: AgentParams,
    pub latent_corr: f64,
    pub class_prior: f64,
    coef_h: f64,
    coef_m: f64,
    intercept: f64,
}

impl BayesModel {
    pub fn new(agent_h: AgentParams, agent_m: AgentParams, latent_corr: f64, class_prior: f64) -> Result<Self> {
        PairConfig::with_prior(agent_h, agent_m, latent_corr, class_prior)?;
        let (sh, sm, r) = (agent_h.sigma, agent_m.sigma, latent_corr);
        let det = sh * sh * sm * sm * (1.0 - r * r);
        // Σ⁻¹ = [[sm², -r sh sm], [-r sh sm, sh²]] / det
        let inv = [
            [sm * sm / det, -r * sh * sm / det],
            [-r * sh * sm / det, sh * sh / det],
        ];
        let quad = |x: [f64; 2]| {
            x[0] * (inv[0][0] * x[0] + inv[0][1] * x[1]) + x[1] * (inv[1][0] * x[0] + inv[1][1] * x[1])
        };
        let m1 = [agent_h.mu1, agent_m.mu1];
        let m0 = [agent_h.mu0, agent_m.mu0];
        let diff = [m1[0] - m0[0], m1[1] - m0[1]];
        let coef_h = inv[0][0] * diff[0] + inv[0][1] * diff[1];
        let coef_m = inv[1][0] * diff[0] + inv[1][1] * diff[1];
        let intercept =
            (class_prior / (1.0 - class_prior)).ln() - 0.5 * (quad(m1) - quad(m0));
        Ok(Self {
            agent_h,
            agent_m,
            latent_corr,
            class_prior,
            coef_h,
            coef_m,
            intercept,
        })
    }

    pub fn from_pair(cfg: &PairConfig) -> Result<Self> {
        Self::new(cfg.agent_h, cfg.agent_m, cfg.latent_corr, cfg.class_prior)
    }

    /// Latent recovered by inverting the confidence map.
    pub fn latent(p: &AgentParams, c: f64) -> f64 {
        let c = c.clamp(CONFIDENCE_CLIP, 1.0 - CONFIDENCE_CLIP);
        p.tau + p.sigma * normal::inv_cdf(c)
    }

    /// Posterior log-odds of `Y = 1` given class-1 confidences.
    pub fn log_odds(&self, conf_h: f64, conf_m: f64) -> f64 {
        let th = Self::latent(&self.agent_h, conf_h);
        let tm = Self::latent(&self.agent_m, conf_m);
        self.intercept + self.coef_h * th + self.coef_m * tm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationRule {
    ConfidenceWeighted { w_h: f64, w_m: f64 },
    BayesAverage(BayesModel),
    MajorityRandomTiebreak,
    DeferTo { agent: Agent },
    BestIndividual { agent: Agent },
}

/// Per-evaluation context: tie-break stream and confidence convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleContext {
    pub tiebreak: TieBreak,
    pub scale: ConfidenceScale,
}

impl RuleContext {
    pub fn new(tiebreak_seed: u64) -> Self {
        Self {
            tiebreak: TieBreak::new(tiebreak_seed),
            scale: ConfidenceScale::ClassOne,
        }
    }

    pub fn with_scale(mut self, scale: ConfidenceScale) -> Self {
        self.scale = scale;
        self
    }
}

impl AggregationRule {
    pub fn confidence_weighted(w_h: f64, w_m: f64) -> Result<Self> {
        if !(w_h.is_finite() && w_m.is_finite()) || (w_h == 0.0 && w_m == 0.0) {
            return Err(Error::invalid("weights", format!("({w_h}, {w_m})")));
        }
        Ok(AggregationRule::ConfidenceWeighted { w_h, w_m })
    }

    /// Best individual on the given sample (ties go to H).
    pub fn best_individual(trials: &[TrialRecord]) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::EmptySample);
        }
        let h = trials.iter().filter(|t| t.h_correct()).count();
        let m = trials.iter().filter(|t| t.m_correct()).count();
        Ok(AggregationRule::BestIndividual {
            agent: if m > h { Agent::M } else { Agent::H },
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregationRule::ConfidenceWeighted { .. } => "cw",
            AggregationRule::BayesAverage(_) => "bayes",
            AggregationRule::MajorityRandomTiebreak => "majority",
            AggregationRule::DeferTo { agent: Agent::H } => "defer-h",
            AggregationRule::DeferTo { agent: Agent::M } => "defer-m",
            AggregationRule::BestIndividual { .. } => "best",
        }
    }

    /// Team label for trial number `index`.
    pub fn apply(&self, t: &TrialRecord, index: u64, ctx: &RuleContext) -> u8 {
        if t.agree() {
            return t.yhat_h;
        }
        let pick = |first: bool| if first { t.yhat_h } else { t.yhat_m };
        match self {
            AggregationRule::ConfidenceWeighted { w_h, w_m } => {
                let sh = w_h * ctx.scale.self_confidence(t.conf_h);
                let sm = w_m * ctx.scale.self_confidence(t.conf_m);
                if sh == sm {
                    pick(ctx.tiebreak.coin(index))
                } else {
                    pick(sh > sm)
                }
            }
            AggregationRule::BayesAverage(model) => {
                let lo = model.log_odds(t.conf_h, t.conf_m);
                if lo == 0.0 {
                    pick(ctx.tiebreak.coin(index))
                } else {
                    u8::from(lo > 0.0)
                }
            }
            AggregationRule::MajorityRandomTiebreak => pick(ctx.tiebreak.coin(index)),
            AggregationRule::DeferTo { agent } | AggregationRule::BestIndividual { agent } => {
                pick(*agent == Agent::H)
            }
        }
    }
}

pub fn apply(rule: &AggregationRule, t: &TrialRecord, index: u64, ctx: &RuleContext) -> u8 {
    rule.apply(t, index, ctx)
}

/// Posterior decision for a single trial under a known joint model.
pub fn bayes_average(
    t: &TrialRecord,
    h: &AgentParams,
    m: &AgentParams,
    latent_corr: f64,
    index: u64,
    ctx: &RuleContext,
) -> Result<u8> {
    let model = BayesModel::new(*h, *m, latent_corr, crate::sdt::DEFAULT_PRIOR)?;
    Ok(AggregationRule::BayesAverage(model).apply(t, index, ctx))
}

/// Fraction of trials on which the rule recovers the label.
pub fn team_accuracy(rule: &AggregationRule, trials: &[TrialRecord], ctx: &RuleContext) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::EmptySample);
    }
    let correct = trials
        .iter()
        .enumerate()
        .filter(|(i, t)| rule.apply(t, *i as u64, ctx) == t.y)
        .count();
    Ok(correct as f64 / trials.len() as f64)
}

/// Accuracy with a normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleAccuracy {
    pub accuracy: f64,
    pub ci_half_width: f64,
}

pub fn team_accuracy_ci(rule: &AggregationRule, trials: &[TrialRecord], ctx: &RuleContext) -> Result<RuleAccuracy> {
    let acc = team_accuracy(rule, trials, ctx)?;
    Ok(RuleAccuracy {
        accuracy: acc,
        ci_half_width: 1.96 * (acc * (1.0 - acc) / trials.len() as f64).sqrt(),
    })
}

/// Rule names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    #[serde(rename = "cw")]
    ConfidenceWeighted,
    #[serde(rename = "bayes")]
    Bayes,
    #[serde(rename = "majority")]
    Majority,
    #[serde(rename = "defer-h")]
    DeferH,
    #[serde(rename = "defer-m")]
    DeferM,
    #[serde(rename = "best")]
    Best,
}

impl RuleKind {
    pub const ALL: [RuleKind; 6] = [
        RuleKind::ConfidenceWeighted,
        RuleKind::Bayes,
        RuleKind::Majority,
        RuleKind::DeferH,
        RuleKind::DeferM,
        RuleKind::Best,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::ConfidenceWeighted => "cw",
            RuleKind::Bayes => "bayes",
            RuleKind::Majority => "majority",
            RuleKind::DeferH => "defer-h",
            RuleKind::DeferM => "defer-m",
            RuleKind::Best => "best",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid("rule", format!("unknown rule `{s}` (cw|bayes|majority|defer-h|defer-m|best)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdt::simulate_trials;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rec(y: u8, yh: u8, ym: u8, ch: f64, cm: f64) -> TrialRecord {
        TrialRecord::new(y, yh, ym, ch, cm).unwrap()
    }

    fn all_rules() -> Vec<AggregationRule> {
        let a = AgentParams::canonical(1.0, 0.0).unwrap();
        let b = AgentParams::canonical(1.7, 0.3).unwrap();
        vec![
            AggregationRule::confidence_weighted(0.3, 0.9).unwrap(),
            AggregationRule::BayesAverage(BayesModel::new(a, b, 0.4, 0.5).unwrap()),
            AggregationRule::MajorityRandomTiebreak,
            AggregationRule::DeferTo { agent: Agent::H },
            AggregationRule::DeferTo { agent: Agent::M },
            AggregationRule::BestIndividual { agent: Agent::M },
        ]
    }

    #[test]
    fn agreement_is_returned_by_every_rule() {
        let ctx = RuleContext::new(3);
        let t = rec(0, 1, 1, 0.51, 0.99);
        for rule in all_rules() {
            assert_eq!(rule.apply(&t, 0, &ctx), 1, "{}", rule.name());
        }
    }

    #[test]
    fn confidence_weighted_examples() {
        let ctx = RuleContext::new(0);
        let rule = AggregationRule::confidence_weighted(1.0, 1.0).unwrap();
        // Folded self-confidences 0.9 (H says 0) and 0.6 (M says 1).
        let t = rec(1, 0, 1, 0.1, 0.6);
        assert_eq!(rule.apply(&t, 0, &ctx), 0);

        let (w_h, w_m) = crate::bounds::optimal_weights(2.0, 1.0, 0.0).unwrap();
        let rule = AggregationRule::confidence_weighted(w_h, w_m).unwrap();
        // 0.8944·0.55 = 0.4919 > 0.4472·0.95 = 0.4249, so H is selected.
        assert!(w_h * 0.55 > w_m * 0.95);
        let t = rec(0, 1, 0, 0.55, 0.05);
        assert_eq!(rule.apply(&t, 0, &ctx), 1);
    }

    #[test]
    fn ties_use_the_seeded_coin() {
        let rule = AggregationRule::confidence_weighted(1.0, 1.0).unwrap();
        let t = rec(1, 1, 0, 0.7, 0.3);
        let ctx = RuleContext::new(9);
        let picks: Vec<u8> = (0..64).map(|i| rule.apply(&t, i, &ctx)).collect();
        assert!(picks.contains(&0) && picks.contains(&1));
        let again: Vec<u8> = (0..64).map(|i| rule.apply(&t, i, &ctx)).collect();
        assert_eq!(picks, again);
    }

    #[test]
    fn bayes_zero_evidence_tie() {
        let a = AgentParams::canonical(1.0, 0.0).unwrap();
        let model = BayesModel::new(a, a, 0.0, 0.5).unwrap();
        assert_eq!(model.log_odds(0.5, 0.5), 0.0);
        // Disagreeing records right at the threshold on both sides.
        let t = rec(1, 1, 0, 0.5, 0.5);
        let rule = AggregationRule::BayesAverage(model);
        let ctx = RuleContext::new(5);
        let picks: Vec<u8> = (0..64).map(|i| rule.apply(&t, i, &ctx)).collect();
        assert!(picks.contains(&0) && picks.contains(&1));
    }

    #[test]
    fn bayes_sides_with_stronger_evidence() {
        let a = AgentParams::canonical(1.2, 0.0).unwrap();
        let ctx = RuleContext::new(0);
        // H: c = 0.9 toward 1 (|Φ⁻¹| = 1.28); M: c = 0.2 toward 0 (|Φ⁻¹| = 0.84).
        let t = rec(1, 1, 0, 0.9, 0.2);
        assert_eq!(bayes_average(&t, &a, &a, 0.0, 0, &ctx).unwrap(), 1);
        let t = rec(1, 1, 0, 0.6, 0.05);
        assert_eq!(bayes_average(&t, &a, &a, 0.0, 0, &ctx).unwrap(), 0);
    }

    #[test]
    fn bayes_log_odds_matches_numeric_posterior() {
        // Brute-force the posterior from the bivariate density at the
        // recovered latents.
        let h = AgentParams::canonical(1.4, 0.2).unwrap();
        let m = AgentParams::new(-0.3, 0.9, 0.8, 0.1).unwrap();
        let r = 0.35;
        let model = BayesModel::new(h, m, r, 0.3).unwrap();
        for &(ch, cm) in &[(0.9, 0.2), (0.3, 0.6), (0.55, 0.45), (0.99, 0.01)] {
            let th = BayesModel::latent(&h, ch);
            let tm = BayesModel::latent(&m, cm);
            let dens = |y: u8| {
                let u = (th - h.mean(y)) / h.sigma;
                let v = (tm - m.mean(y)) / m.sigma;
                normal::bivariate_pdf(u, v, r)
            };
            let expected = (0.3 * dens(1) / (0.7 * dens(0))).ln();
            assert_abs_diff_eq!(model.log_odds(ch, cm), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn bayes_equals_equal_weight_cw_for_symmetric_independent_pair() {
        let a = AgentParams::canonical(1.0, 0.0).unwrap();
        let cfg = PairConfig::new(a, a, 0.0).unwrap();
        let trials = simulate_trials(&cfg, 100_000, 17);
        let ctx = RuleContext::new(1);
        let bayes = AggregationRule::BayesAverage(BayesModel::from_pair(&cfg).unwrap());
        let cw = AggregationRule::confidence_weighted(1.0, 1.0).unwrap();
        for (i, t) in trials.iter().enumerate() {
            assert_eq!(bayes.apply(t, i as u64, &ctx), cw.apply(t, i as u64, &ctx));
        }
    }

    #[test]
    fn team_accuracy_basics() {
        let ctx = RuleContext::new(0);
        let perfect: Vec<_> = (0..50).map(|i| rec((i % 2) as u8, (i % 2) as u8, (i % 2) as u8, 0.7, 0.8)).collect();
        for rule in all_rules() {
            assert_eq!(team_accuracy(&rule, &perfect, &ctx).unwrap(), 1.0);
        }
        assert_eq!(
            team_accuracy(&AggregationRule::MajorityRandomTiebreak, &[], &ctx),
            Err(Error::EmptySample)
        );

        let a = AgentParams::canonical(1.0, 0.0).unwrap();
        let b = AgentParams::canonical(1.8, -0.2).unwrap();
        let trials = simulate_trials(&PairConfig::new(a, b, 0.2).unwrap(), 20_000, 4);
        let m_acc = trials.iter().filter(|t| t.m_correct()).count() as f64 / 2e4;
        let h_acc = trials.iter().filter(|t| t.h_correct()).count() as f64 / 2e4;
        let defer_m = AggregationRule::DeferTo { agent: Agent::M };
        assert_eq!(team_accuracy(&defer_m, &trials, &ctx).unwrap(), m_acc);
        let best = AggregationRule::best_individual(&trials).unwrap();
        assert_eq!(team_accuracy(&best, &trials, &ctx).unwrap(), h_acc.max(m_acc));
    }

    #[test]
    fn rule_kind_round_trip() {
        for k in RuleKind::ALL {
            assert_eq!(k.as_str().parse::<RuleKind>().unwrap(), k);
        }
        assert!("vote".parse::<RuleKind>().is_err());
    }

    proptest! {
        #[test]
        fn cw_scale_invariant(
            w_h in 0.01f64..5.0, w_m in 0.01f64..5.0, lambda in 0.01f64..100.0,
            ch in 0.0f64..1.0, cm in 0.0f64..1.0, yh in 0u8..2, ym in 0u8..2,
        ) {
            let ctx = RuleContext::new(2);
            let t = rec(1, yh, ym, ch, cm);
            let a = AggregationRule::confidence_weighted(w_h, w_m).unwrap();
            let b = AggregationRule::confidence_weighted(lambda * w_h, lambda * w_m).unwrap();
            // Scaling can perturb exact ties only in the last ulp; compare off-tie.
            let sh = w_h * ch.max(1.0 - ch);
            let sm = w_m * cm.max(1.0 - cm);
            prop_assume!((sh - sm).abs() > 1e-12 * sh.max(sm));
            prop_assert_eq!(a.apply(&t, 0, &ctx), b.apply(&t, 0, &ctx));
        }

        #[test]
        fn agreement_dominance(
            y in 0u8..2, yhat in 0u8..2, ch in 0.0f64..1.0, cm in 0.0f64..1.0, idx in 0u64..1_000_000,
        ) {
            let ctx = RuleContext::new(idx);
            let t = rec(y, yhat, yhat, ch, cm);
            for rule in all_rules() {
                prop_assert_eq!(rule.apply(&t, idx, &ctx), yhat);
            }
        }
    }
}
