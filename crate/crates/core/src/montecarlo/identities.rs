//! Disagreement identities checked by simulation.

use serde::{Deserialize, Serialize};

use super::threshold::quantile;
use crate::error::{Error, Result};
use crate::rng;
use crate::sdt::{PairConfig, TrialSampler};

const IDENT_DOMAIN: u64 = 0x4944454e54;

/// Smallest sample accepted by [`verify_disagreement_identities`].
pub const MIN_IDENTITY_TRIALS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub n: usize,
    pub rho_hm: f64,
    pub p_disagree: f64,
    /// `e_H + e_M − 2·P(E_H, E_M)` from the model.
    pub p_disagree_pred: f64,
    pub p_disagree_dev: f64,
    /// Median folded confidence on the disagreement set.
    pub low_conf_cut: f64,
    /// `P(max(c̃_H, c̃_M) < cut | disagree)`.
    pub low_conf: f64,
    /// `(1 + ρ_HM) / 2`.
    pub low_conf_pred: f64,
    pub low_conf_dev: f64,
}

pub fn verify_disagreement_identities(cfg: &PairConfig, n: usize, seed: u64) -> Result<DisagreementReport> {
    if n < MIN_IDENTITY_TRIALS {
        return Err(Error::Precondition(format!(
            "identity check needs n >= {MIN_IDENTITY_TRIALS}, got {n}"
        )));
    }
    let sampler = TrialSampler::new(*cfg);
    let fold = |c: f64| c.max(1.0 - c);
    let parts = rng::map_chunks(n, |chunk, range| {
        let mut r = rng::chunk_rng(seed, IDENT_DOMAIN, chunk);
        let mut pairs = Vec::new();
        for _ in range {
            let t = sampler.sample(&mut r);
            if !t.agree() {
                pairs.push((fold(t.conf_h), fold(t.conf_m)));
            }
        }
        pairs
    });
    let pairs: Vec<(f64, f64)> = parts.into_iter().flatten().collect();
    let rho_hm = cfg.error_correlation()?;
    let p_pred = cfg.disagreement_prob()?;
    let p_emp = pairs.len() as f64 / n as f64;
    let low_conf_pred = 0.5 * (1.0 + rho_hm);
    let (cut, low) = if pairs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mut pooled: Vec<f64> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        pooled.sort_by(f64::total_cmp);
        let cut = quantile(&pooled, 0.5);
        let low = pairs.iter().filter(|&&(a, b)| a.max(b) < cut).count() as f64 / pairs.len() as f64;
        (cut, low)
    };
    Ok(DisagreementReport {
        n,
        rho_hm,
        p_disagree: p_emp,
        p_disagree_pred: p_pred,
        p_disagree_dev: p_emp - p_pred,
        low_conf_cut: cut,
        low_conf: low,
        low_conf_pred,
        low_conf_dev: low - low_conf_pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdt::{joint_error_from_correlation, AgentParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn disagreement_rate_matches_closed_form() {
        // e_H = e_M = 0.2 at ρ = 0.5: p_D = 0.4 − 2·(0.04 + 0.5·0.16) = 0.16.
        assert_abs_diff_eq!(0.4 - 2.0 * joint_error_from_correlation(0.2, 0.2, 0.5), 0.16, epsilon = 1e-12);
        let agent = AgentParams::canonical(2.0 * crate::normal::inv_cdf(0.8), 0.0).unwrap();
        let cfg = PairConfig::with_error_correlation(agent, agent, 0.5, 0.5).unwrap();
        let rep = verify_disagreement_identities(&cfg, 200_000, 5).unwrap();
        assert_abs_diff_eq!(rep.p_disagree_pred, 0.16, epsilon = 1e-6);
        assert!(rep.p_disagree_dev.abs() < 4.0 * (0.16 * 0.84 / 2e5f64).sqrt());
    }

    #[test]
    fn independent_agents_split_the_disagreements() {
        let agent = AgentParams::canonical(1.0, 0.0).unwrap();
        let cfg = PairConfig::new(agent, agent, 0.0).unwrap();
        let rep = verify_disagreement_identities(&cfg, 200_000, 1).unwrap();
        assert_abs_diff_eq!(rep.low_conf_pred, 0.5, epsilon = 1e-9);
        assert!(rep.low_conf > 0.0 && rep.low_conf < 1.0);
    }

    #[test]
    fn small_samples_are_rejected() {
        let agent = AgentParams::canonical(1.0, 0.0).unwrap();
        let cfg = PairConfig::new(agent, agent, 0.0).unwrap();
        assert!(verify_disagreement_identities(&cfg, 1000, 1).is_err());
    }
}
