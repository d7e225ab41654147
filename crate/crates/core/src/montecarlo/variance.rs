//! Replication variance of team accuracy against the closed-form bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationRule, RuleContext};
use crate::bounds::{optimal_weights, variance_bound};
use crate::error::{Error, Result};
use crate::rng::{self, chunk_rng, derive_seed};
use crate::sdt::{AgentParams, PairConfig, TrialSampler};

const VAR_DOMAIN: u64 = 0x564152;
const DRAW_DOMAIN: u64 = 0x5641_5244;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSpec {
    pub configs: usize,
    pub replications: usize,
    pub trials_per_replication: usize,
    pub seed: u64,
    /// Sensitivities are drawn uniformly from this range.
    pub d_range: (f64, f64),
    /// Latent correlations are drawn uniformly from this range.
    pub latent_corr_range: (f64, f64),
}

impl Default for VarianceSpec {
    fn default() -> Self {
        Self {
            configs: 500,
            replications: 100,
            trials_per_replication: 1000,
            seed: 0,
            d_range: (0.5, 2.5),
            latent_corr_range: (0.0, 0.9),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub d_h: f64,
    pub d_m: f64,
    pub latent_corr: f64,
    pub rho_hm: f64,
    pub e_star: f64,
    pub mean_accuracy: f64,
    pub sample_variance: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub rows: Vec<VarianceRow>,
    pub fraction_holding: f64,
}

/// Confidence-weighted accuracy of one replication.
fn replication_accuracy(cfg: &PairConfig, rule: &AggregationRule, n: usize, seed: u64) -> f64 {
    let sampler = TrialSampler::new(*cfg);
    let ctx = RuleContext::new(derive_seed(seed, &[7]));
    let correct: usize = rng::map_chunks(n, |chunk, range| {
        let mut r = chunk_rng(seed, VAR_DOMAIN, chunk);
        range
            .filter(|&i| {
                let t = sampler.sample(&mut r);
                rule.apply(&t, i as u64, &ctx) == t.y
            })
            .count()
    })
    .into_iter()
    .sum();
    correct as f64 / n as f64
}

pub fn variance_check(spec: &VarianceSpec) -> Result<VarianceReport> {
    if spec.configs == 0 || spec.replications < 2 || spec.trials_per_replication == 0 {
        return Err(Error::invalid(
            "variance_spec",
            "need configs >= 1, replications >= 2 and trials >= 1",
        ));
    }
    let (d_lo, d_hi) = spec.d_range;
    let (r_lo, r_hi) = spec.latent_corr_range;
    if !(d_lo > 0.0 && d_hi >= d_lo && r_lo > -1.0 && r_hi < 1.0 && r_hi >= r_lo) {
        return Err(Error::invalid("variance_spec", "invalid sampling ranges"));
    }
    let mut draw = chunk_rng(spec.seed, DRAW_DOMAIN, 0);
    let mut rows = Vec::with_capacity(spec.configs);
    for c in 0..spec.configs {
        let d_h = draw.random_range(d_lo..=d_hi);
        let d_m = draw.random_range(d_lo..=d_hi);
        let r = draw.random_range(r_lo..=r_hi);
        let cfg = PairConfig::new(AgentParams::canonical(d_h, 0.0)?, AgentParams::canonical(d_m, 0.0)?, r)?;
        let rho = cfg.error_correlation()?;
        let (w_h, w_m) = optimal_weights(d_h, d_m, rho)?;
        let rule = AggregationRule::confidence_weighted(w_h, w_m)?;
        let accs: Vec<f64> = (0..spec.replications)
            .map(|rep| {
                let seed = derive_seed(spec.seed, &[c as u64, rep as u64]);
                replication_accuracy(&cfg, &rule, spec.trials_per_replication, seed)
            })
            .collect();
        let k = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / k;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let e_star = 1.0 - cfg.accuracy_h().max(cfg.accuracy_m());
        let bound = variance_bound(e_star, rho, d_h, d_m, spec.trials_per_replication)?;
        rows.push(VarianceRow {
            d_h,
            d_m,
            latent_corr: r,
            rho_hm: rho,
            e_star,
            mean_accuracy: mean,
            sample_variance: var,
            bound,
            holds: var <= bound,
        });
    }
    let held = rows.iter().filter(|r| r.holds).count();
    Ok(VarianceReport {
        fraction_holding: held as f64 / rows.len() as f64,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_check_runs_and_is_deterministic() {
        let spec = VarianceSpec {
            configs: 3,
            replications: 10,
            trials_per_replication: 500,
            seed: 9,
            ..Default::default()
        };
        let a = variance_check(&spec).unwrap();
        let b = variance_check(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 3);
        assert!(a.rows.iter().all(|r| r.sample_variance > 0.0 && r.bound > 0.0));
    }

    #[test]
    fn rejects_single_replication() {
        let spec = VarianceSpec {
            replications: 1,
            ..Default::default()
        };
        assert!(variance_check(&spec).is_err());
    }
}
