//! BIC comparison of correctness models and rule comparison on trial logs.
//!
//! All four models describe the same observations — whether each agent was
//! correct on each trial, given its self-confidence `c̃ = max(c, 1 − c)` — so
//! their likelihoods are directly comparable. Each agent gets its own
//! coefficients.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::FitResult;
use super::likelihood::SdtParams;
use super::recovery::PriorBox;
use crate::aggregation::{
    team_accuracy_ci, Agent, AggregationRule, BayesModel, RuleContext, RuleKind, CONFIDENCE_CLIP,
};
use crate::bounds::optimal_weights;
use crate::error::{Error, Result};
use crate::normal;
use crate::rng::{chunk_rng, derive_seed};
use crate::sdt::{simulate_trials, TrialRecord};

pub const MIN_COMPARE_TRIALS: usize = 500;

/// Probability clip for Bernoulli log-likelihoods of fitted probabilities.
const PROB_CLIP: f64 = 1e-6;
const BIC_DOMAIN: u64 = 0x424943;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectnessModel {
    /// `logit P(correct) = d·Φ⁻¹(c̃) + b·(2ŷ − 1)`: the correctness posterior
    /// implied by Gaussian evidence with threshold and sensitivity free.
    Sdt,
    /// `P(correct) = α + β·c̃`, least squares.
    LinearConfidence,
    /// `logit P(correct) = α + β·c̃`.
    Logistic,
    /// `P(correct) = a`.
    AccuracyOnly,
}

impl CorrectnessModel {
    pub const ALL: [CorrectnessModel; 4] = [
        CorrectnessModel::Sdt,
        CorrectnessModel::LinearConfidence,
        CorrectnessModel::Logistic,
        CorrectnessModel::AccuracyOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorrectnessModel::Sdt => "sdt",
            CorrectnessModel::LinearConfidence => "linear-confidence",
            CorrectnessModel::Logistic => "logistic",
            CorrectnessModel::AccuracyOnly => "accuracy-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: CorrectnessModel,
    pub n_params: usize,
    pub log_likelihood: Option<f64>,
    pub bic: Option<f64>,
    /// BIC minus the best BIC.
    pub delta_bic: Option<f64>,
    /// Coefficients, H first then M.
    pub coefficients: Vec<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub n_trials: usize,
    /// Agent-trial observations entering each likelihood.
    pub n_obs: usize,
    pub models: Vec<ModelFit>,
    pub best: CorrectnessModel,
}

impl ModelComparison {
    pub fn model(&self, m: CorrectnessModel) -> Option<&ModelFit> {
        self.models.iter().find(|f| f.model == m)
    }

    /// Model with the largest BIC among those fitted.
    pub fn worst(&self) -> Option<CorrectnessModel> {
        self.models
            .iter()
            .filter_map(|f| f.bic.map(|b| (f.model, b)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(m, _)| m)
    }
}

struct AgentData {
    conf: Vec<f64>,
    side: Vec<f64>,
    correct: Vec<f64>,
}

fn agent_data(trials: &[TrialRecord], agent: Agent) -> AgentData {
    let mut d = AgentData {
        conf: Vec::with_capacity(trials.len()),
        side: Vec::with_capacity(trials.len()),
        correct: Vec::with_capacity(trials.len()),
    };
    for t in trials {
        let (c, yhat, ok) = match agent {
            Agent::H => (t.conf_h, t.yhat_h, t.h_correct()),
            Agent::M => (t.conf_m, t.yhat_m, t.m_correct()),
        };
        d.conf.push(c.max(1.0 - c).clamp(0.5, 1.0 - CONFIDENCE_CLIP));
        d.side.push(if yhat == 1 { 1.0 } else { -1.0 });
        d.correct.push(f64::from(u8::from(ok)));
    }
    d
}

fn bernoulli_ll(y: &[f64], p: impl Iterator<Item = f64>) -> f64 {
    y.iter()
        .zip(p)
        .map(|(y, p)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum()
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_design(x: &DMatrix<f64>) -> std::result::Result<(), String> {
    let xtx = x.transpose() * x;
    let eig = xtx.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(hi > 0.0) || lo <= 1e-10 * hi {
        return Err("singular design: confidence does not vary".into());
    }
    Ok(())
}

/// Logistic regression by Newton–Raphson with step halving.
pub fn logistic_regression(x: &DMatrix<f64>, y: &[f64]) -> std::result::Result<(Vec<f64>, f64), String> {
    check_design(x)?;
    let yv = DVector::from_column_slice(y);
    let ll = |beta: &DVector<f64>| -> f64 {
        let eta = x * beta;
        eta.iter().zip(y).map(|(e, y)| y * e - log1p_exp(*e)).sum()
    };
    let mut beta = DVector::zeros(x.ncols());
    let mut cur = ll(&beta);
    for _ in 0..100 {
        let eta = x * &beta;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = p.map(|p| (p * (1.0 - p)).max(1e-12));
        let grad = x.transpose() * (&yv - &p);
        let k = x.ncols();
        let mut info = DMatrix::identity(k, k) * 1e-10;
        for (i, wi) in w.iter().enumerate() {
            for a in 0..k {
                for b in 0..k {
                    info[(a, b)] += wi * x[(i, a)] * x[(i, b)];
                }
            }
        }
        let step = info
            .cholesky()
            .ok_or_else(|| "information matrix not positive definite".to_string())?
            .solve(&grad);
        let mut scale = 1.0;
        let mut next = &beta + &step;
        let mut val = ll(&next);
        while val < cur && scale > 1e-6 {
            scale *= 0.5;
            next = &beta + &step * scale;
            val = ll(&next);
        }
        let done = (val - cur).abs() < 1e-10 * (1.0 + cur.abs());
        beta = next;
        cur = val.max(cur);
        if done {
            break;
        }
    }
    Ok((beta.iter().copied().collect(), cur))
}

/// Least squares of correctness on `(1, c̃)`.
fn linear_fit(x: &DMatrix<f64>, y: &[f64]) -> std::result::Result<(Vec<f64>, f64), String> {
    check_design(x)?;
    let yv = DVector::from_column_slice(y);
    let beta = (x.transpose() * x)
        .cholesky()
        .ok_or_else(|| "singular design: confidence does not vary".to_string())?
        .solve(&(x.transpose() * yv));
    let fitted = x * &beta;
    Ok((beta.iter().copied().collect(), bernoulli_ll(y, fitted.iter().copied())))
}

fn fit_agent(model: CorrectnessModel, d: &AgentData) -> std::result::Result<(Vec<f64>, f64), String> {
    let n = d.conf.len();
    match model {
        CorrectnessModel::Sdt => {
            let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { normal::inv_cdf(d.conf[i]) } else { d.side[i] });
            logistic_regression(&x, &d.correct)
        }
        CorrectnessModel::LinearConfidence => {
            let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { d.conf[i] });
            linear_fit(&x, &d.correct)
        }
        CorrectnessModel::Logistic => {
            let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { d.conf[i] });
            logistic_regression(&x, &d.correct)
        }
        CorrectnessModel::AccuracyOnly => {
            let a = d.correct.iter().sum::<f64>() / n as f64;
            Ok((vec![a], bernoulli_ll(&d.correct, std::iter::repeat(a))))
        }
    }
}

fn params_per_agent(model: CorrectnessModel) -> usize {
    match model {
        CorrectnessModel::AccuracyOnly => 1,
        _ => 2,
    }
}

pub fn compare_models(trials: &[TrialRecord]) -> Result<ModelComparison> {
    if trials.len() < MIN_COMPARE_TRIALS {
        return Err(Error::Precondition(format!(
            "model comparison needs at least {MIN_COMPARE_TRIALS} trials, got {}",
            trials.len()
        )));
    }
    let agents = [agent_data(trials, Agent::H), agent_data(trials, Agent::M)];
    let n_obs = 2 * trials.len();
    let mut models: Vec<ModelFit> = CorrectnessModel::ALL
        .into_iter()
        .map(|model| {
            let n_params = 2 * params_per_agent(model);
            let fits: std::result::Result<Vec<_>, String> = agents.iter().map(|d| fit_agent(model, d)).collect();
            match fits {
                Ok(fits) => {
                    let ll: f64 = fits.iter().map(|f| f.1).sum();
                    ModelFit {
                        model,
                        n_params,
                        log_likelihood: Some(ll),
                        bic: Some(-2.0 * ll + n_params as f64 * (n_obs as f64).ln()),
                        delta_bic: None,
                        coefficients: fits.into_iter().flat_map(|f| f.0).collect(),
                        skipped: None,
                    }
                }
                Err(reason) => ModelFit {
                    model,
                    n_params,
                    log_likelihood: None,
                    bic: None,
                    delta_bic: None,
                    coefficients: Vec::new(),
                    skipped: Some(reason),
                },
            }
        })
        .collect();
    let (best, best_bic) = models
        .iter()
        .filter_map(|m| m.bic.map(|b| (m.model, b)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Precondition("no model could be fitted".into()))?;
    for m in &mut models {
        m.delta_bic = m.bic.map(|b| b - best_bic);
    }
    Ok(ModelComparison {
        n_trials: trials.len(),
        n_obs,
        models,
        best,
    })
}

/// Outcome of repeated comparisons on data simulated from the SDT model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicStudy {
    pub runs: usize,
    pub trials_per_run: usize,
    pub sdt_best: usize,
    pub accuracy_only_worst: usize,
    /// Generating parameters and BIC ranking (best first) per run.
    pub rankings: Vec<(SdtParams, Vec<CorrectnessModel>)>,
}

/// Repeats [`compare_models`] on `runs` data sets whose parameters are drawn
/// from `prior`.
pub fn bic_study(runs: usize, trials_per_run: usize, seed: u64, prior: &PriorBox) -> Result<BicStudy> {
    if runs == 0 {
        return Err(Error::invalid("runs", "need at least one run"));
    }
    let mut draw = chunk_rng(seed, BIC_DOMAIN, 0);
    let truths: Vec<SdtParams> = (0..runs).map(|_| prior.draw(&mut draw)).collect();
    let rankings = truths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let trials = simulate_trials(&p.pair(0.5)?, trials_per_run, derive_seed(seed, &[i as u64]));
            let cmp = compare_models(&trials)?;
            let mut ranked: Vec<(CorrectnessModel, f64)> =
                cmp.models.iter().filter_map(|m| m.bic.map(|b| (m.model, b))).collect();
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
            Ok((*p, ranked.into_iter().map(|r| r.0).collect::<Vec<_>>()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BicStudy {
        runs,
        trials_per_run,
        sdt_best: rankings.iter().filter(|r| r.1.first() == Some(&CorrectnessModel::Sdt)).count(),
        accuracy_only_worst: rankings
            .iter()
            .filter(|r| r.1.last() == Some(&CorrectnessModel::AccuracyOnly))
            .count(),
        rankings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleScore {
    pub rule: RuleKind,
    pub accuracy: f64,
    pub ci_half_width: f64,
}

/// Team accuracy of every rule on a trial log. Confidence weights and the
/// Bayes posterior come from `fit`.
pub fn rule_comparison(trials: &[TrialRecord], fit: &FitResult, seed: u64) -> Result<Vec<RuleScore>> {
    let e = fit.estimates;
    let cfg = e.pair(fit.class_prior)?;
    let rho = fit.rho_hm.unwrap_or(0.0);
    let cw = match optimal_weights(e.d_h, e.d_m, rho) {
        Ok((w_h, w_m)) if w_h > 0.0 || w_m > 0.0 => AggregationRule::confidence_weighted(w_h, w_m)?,
        _ => AggregationRule::confidence_weighted(1.0, 1.0)?,
    };
    let rules = [
        (RuleKind::ConfidenceWeighted, cw),
        (RuleKind::Bayes, AggregationRule::BayesAverage(BayesModel::from_pair(&cfg)?)),
        (RuleKind::Majority, AggregationRule::MajorityRandomTiebreak),
        (RuleKind::DeferH, AggregationRule::DeferTo { agent: Agent::H }),
        (RuleKind::DeferM, AggregationRule::DeferTo { agent: Agent::M }),
        (RuleKind::Best, AggregationRule::best_individual(trials)?),
    ];
    let ctx = RuleContext::new(seed);
    rules
        .into_iter()
        .map(|(rule, r)| {
            let acc = team_accuracy_ci(&r, trials, &ctx)?;
            Ok(RuleScore {
                rule,
                accuracy: acc.accuracy,
                ci_half_width: acc.ci_half_width,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn data(n: usize, seed: u64) -> Vec<TrialRecord> {
        let p = SdtParams {
            d_h: 1.5,
            d_m: 1.0,
            rho_latent: 0.3,
            tau_h: 0.45,
            tau_m: 0.55,
        };
        simulate_trials(&p.pair(0.5).unwrap(), n, seed)
    }

    #[test]
    fn sdt_wins_and_accuracy_only_loses_on_sdt_data() {
        let cmp = compare_models(&data(10_000, 1)).unwrap();
        assert_eq!(cmp.best, CorrectnessModel::Sdt);
        assert_eq!(cmp.worst(), Some(CorrectnessModel::AccuracyOnly));
        let sdt = cmp.model(CorrectnessModel::Sdt).unwrap();
        assert_eq!(sdt.delta_bic, Some(0.0));
        assert_abs_diff_eq!(
            sdt.bic.unwrap(),
            -2.0 * sdt.log_likelihood.unwrap() + 4.0 * (20_000f64).ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn constant_confidence_skips_confidence_models() {
        let trials: Vec<TrialRecord> = data(600, 2)
            .into_iter()
            .map(|t| TrialRecord {
                conf_h: if t.yhat_h == 1 { 0.8 } else { 0.2 },
                conf_m: if t.yhat_m == 1 { 0.7 } else { 0.3 },
                ..t
            })
            .collect();
        let cmp = compare_models(&trials).unwrap();
        assert!(cmp.model(CorrectnessModel::LinearConfidence).unwrap().skipped.is_some());
        assert!(cmp.model(CorrectnessModel::Logistic).unwrap().skipped.is_some());
        assert!(cmp.model(CorrectnessModel::AccuracyOnly).unwrap().bic.is_some());
    }

    #[test]
    fn logistic_matches_known_coefficients() {
        // Grouped data with exact log-odds -1 and +1.
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (x, p) in [(0.0, 1.0 / (1.0 + 1f64.exp())), (1.0, 1.0 / (1.0 + (-1f64).exp()))] {
            let ones = (p * 10_000f64).round() as usize;
            for i in 0..10_000 {
                rows.push(x);
                y.push(f64::from(u8::from(i < ones)));
            }
        }
        let xm = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { 1.0 } else { rows[i] });
        let (beta, _) = logistic_regression(&xm, &y).unwrap();
        assert_abs_diff_eq!(beta[0], -1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(beta[1], 2.0, epsilon = 2e-3);
    }

    #[test]
    fn small_samples_rejected() {
        assert!(matches!(compare_models(&data(100, 3)), Err(Error::Precondition(_))));
    }
}
