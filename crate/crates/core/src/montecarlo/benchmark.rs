//! Aggregation-rule benchmark on configurations below the complementarity
//! threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{team_accuracy, Agent, AggregationRule, BayesModel, RuleContext};
use crate::bounds::{optimal_weights, rho_star};
use crate::error::{Error, Result};
use crate::inference::{fit_sdt_with, FitOptions};
use crate::rng::{chunk_rng, derive_seed};
use crate::sdt::{simulate_trials, AgentParams, PairConfig};

const CONFIG_DOMAIN: u64 = 0x4245_4e43;
/// Rejection-sampling budget per requested configuration.
const ATTEMPTS_PER_CONFIG: usize = 1000;

/// Rules in report order.
pub const BENCHMARK_RULES: [&str; 6] = ["cw", "bayes-oracle", "bayes-fitted", "majority", "defer-weaker", "defer-stronger"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub configs: usize,
    pub trials_per_config: usize,
    pub seed: u64,
    pub d_range: (f64, f64),
    pub latent_corr_range: (f64, f64),
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            configs: 50,
            trials_per_config: 20_000,
            seed: 0,
            d_range: (0.5, 2.5),
            latent_corr_range: (0.0, 0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub d_h: f64,
    pub d_m: f64,
    pub latent_corr: f64,
    pub rho_hm: f64,
    pub rho_star: f64,
    /// Accuracy per rule, in [`BENCHMARK_RULES`] order.
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMean {
    pub rule: String,
    pub mean_accuracy: f64,
    /// Standard error of the mean across configurations.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub means: Vec<RuleMean>,
    pub configs: Vec<BenchmarkConfig>,
    /// Proposals drawn to find the configurations.
    pub proposals: usize,
}

impl BenchmarkReport {
    pub fn mean(&self, rule: &str) -> Option<f64> {
        self.means.iter().find(|m| m.rule == rule).map(|m| m.mean_accuracy)
    }
}

fn evaluate(cfg: &PairConfig, n: usize, seed: u64) -> Result<Vec<f64>> {
    let trials = simulate_trials(cfg, n, derive_seed(seed, &[0]));
    let ctx = RuleContext::new(derive_seed(seed, &[1]));
    let (d_h, d_m) = (cfg.agent_h.metacog_sensitivity(), cfg.agent_m.metacog_sensitivity());
    let (w_h, w_m) = optimal_weights(d_h, d_m, cfg.error_correlation()?)?;
    let fit = fit_sdt_with(
        &trials,
        &FitOptions {
            class_prior: Some(cfg.class_prior),
            ..Default::default()
        },
    )?;
    let fitted = fit.estimates.pair(cfg.class_prior)?;
    let (weaker, stronger) = if cfg.accuracy_h() < cfg.accuracy_m() {
        (Agent::H, Agent::M)
    } else {
        (Agent::M, Agent::H)
    };
    let rules = [
        AggregationRule::confidence_weighted(w_h, w_m)?,
        AggregationRule::BayesAverage(BayesModel::from_pair(cfg)?),
        AggregationRule::BayesAverage(BayesModel::from_pair(&fitted)?),
        AggregationRule::MajorityRandomTiebreak,
        AggregationRule::DeferTo { agent: weaker },
        AggregationRule::DeferTo { agent: stronger },
    ];
    rules.iter().map(|r| team_accuracy(r, &trials, &ctx)).collect()
}

pub fn rule_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    if spec.configs < 2 || spec.trials_per_config < 100 {
        return Err(Error::invalid("benchmark", "need at least 2 configs and 100 trials each"));
    }
    let (d_lo, d_hi) = spec.d_range;
    let (r_lo, r_hi) = spec.latent_corr_range;
    if !(d_lo > 0.0 && d_hi >= d_lo && r_lo > -1.0 && r_hi < 1.0 && r_hi >= r_lo) {
        return Err(Error::invalid("benchmark", "invalid sampling ranges"));
    }
    let mut draw = chunk_rng(spec.seed, CONFIG_DOMAIN, 0);
    let mut configs = Vec::with_capacity(spec.configs);
    let mut proposals = 0;
    while configs.len() < spec.configs {
        if proposals >= ATTEMPTS_PER_CONFIG * spec.configs {
            return Err(Error::Precondition(format!(
                "found only {} configurations below threshold in {proposals} proposals",
                configs.len()
            )));
        }
        proposals += 1;
        let d_h = draw.random_range(d_lo..=d_hi);
        let d_m = draw.random_range(d_lo..=d_hi);
        let r = draw.random_range(r_lo..=r_hi);
        let cfg = PairConfig::new(AgentParams::canonical(d_h, 0.0)?, AgentParams::canonical(d_m, 0.0)?, r)?;
        let rho = cfg.error_correlation()?;
        let star = rho_star(cfg.accuracy_h(), cfg.accuracy_m())?;
        if rho >= star.value {
            continue;
        }
        let seed = derive_seed(spec.seed, &[configs.len() as u64]);
        configs.push(BenchmarkConfig {
            d_h,
            d_m,
            latent_corr: r,
            rho_hm: rho,
            rho_star: star.value,
            accuracies: evaluate(&cfg, spec.trials_per_config, seed)?,
        });
    }
    let k = configs.len() as f64;
    let means = BENCHMARK_RULES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let xs: Vec<f64> = configs.iter().map(|c| c.accuracies[j]).collect();
            let mean = xs.iter().sum::<f64>() / k;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
            RuleMean {
                rule: (*name).to_string(),
                mean_accuracy: mean,
                se: (var / k).sqrt(),
            }
        })
        .collect();
    Ok(BenchmarkReport {
        means,
        configs,
        proposals,
    })
}
