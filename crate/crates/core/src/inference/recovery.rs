//! Parameter-recovery study on synthetic pairs drawn from a prior box.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_sdt_with, CiMethod, FitOptions, FitResult, FitStatus, ParamEstimate};
use super::likelihood::SdtParams;
use crate::error::{Error, Result};
use crate::rng::{chunk_rng, derive_seed};
use crate::sdt::simulate_trials;

pub const MIN_RECOVERY_PAIRS: usize = 100;
const PRIOR_DOMAIN: u64 = 0x5052_494f;
const CLASS_PRIOR: f64 = 0.5;

/// Names of the reported parameters, in report order.
pub const RECOVERY_PARAMS: [&str; 5] = ["d_h", "d_m", "rho_hm", "tau_h", "tau_m"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub d: (f64, f64),
    pub rho_latent: (f64, f64),
    pub tau: (f64, f64),
}

impl Default for PriorBox {
    fn default() -> Self {
        Self {
            d: (0.5, 2.5),
            rho_latent: (0.0, 0.9),
            tau: (0.3, 0.7),
        }
    }
}

impl PriorBox {
    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> SdtParams {
        SdtParams {
            d_h: rng.random_range(self.d.0..=self.d.1),
            d_m: rng.random_range(self.d.0..=self.d.1),
            rho_latent: rng.random_range(self.rho_latent.0..=self.rho_latent.1),
            tau_h: rng.random_range(self.tau.0..=self.tau.1),
            tau_m: rng.random_range(self.tau.0..=self.tau.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecovery {
    pub name: String,
    /// Mean of `estimate − truth`.
    pub bias: f64,
    /// Standard deviation of `estimate − truth`.
    pub sd: f64,
    /// Fraction of 95% intervals containing the truth.
    pub coverage: f64,
    /// Pairs contributing an interval.
    pub with_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecovery {
    pub pair: usize,
    pub truth: [f64; 5],
    pub estimate: [f64; 5],
    pub covered: [Option<bool>; 5],
    pub joint_covered: Option<bool>,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n_pairs: usize,
    pub trials_per_pair: usize,
    pub ci_method: CiMethod,
    pub params: Vec<ParamRecovery>,
    /// Fraction of pairs whose 95% joint ellipsoid contains all five truths.
    pub joint_coverage: f64,
    /// Pairs whose simulation or fit failed, excluded from every summary.
    pub n_failed: usize,
    pub pairs: Vec<PairRecovery>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub prior: PriorBox,
    /// Parametric bootstrap replicates per pair; `None` uses the Hessian.
    pub bootstrap: Option<usize>,
}


pub fn recovery_study(n_pairs: usize, trials_per_pair: usize, seed: u64) -> Result<RecoveryReport> {
    recovery_study_with(n_pairs, trials_per_pair, seed, &RecoveryOptions::default())
}

fn recover_pair(i: usize, truth: SdtParams, trials: usize, seed: u64, opts: &RecoveryOptions) -> Option<PairRecovery> {
    let cfg = truth.pair(CLASS_PRIOR).ok()?;
    let rho_true = cfg.error_correlation().ok()?;
    let data = simulate_trials(&cfg, trials, derive_seed(seed, &[i as u64, 0]));
    let fit_opts = FitOptions {
        bootstrap: opts.bootstrap,
        seed: derive_seed(seed, &[i as u64, 1]),
        class_prior: Some(CLASS_PRIOR),
        ..Default::default()
    };
    let fit: FitResult = fit_sdt_with(&data, &fit_opts).ok()?;
    let rho_hat = fit.rho_hm?;
    let e = fit.estimates;
    let t = [truth.d_h, truth.d_m, rho_true, truth.tau_h, truth.tau_m];
    let ci = fit.ci_95;
    let intervals: [ParamEstimate; 5] = [ci.d_h, ci.d_m, ci.rho_hm, ci.tau_h, ci.tau_m];
    Some(PairRecovery {
        pair: i,
        truth: t,
        estimate: [e.d_h, e.d_m, rho_hat, e.tau_h, e.tau_m],
        covered: std::array::from_fn(|k| intervals[k].covers(t[k])),
        joint_covered: fit.joint_covers(t),
        status: fit.status,
    })
}

pub fn recovery_study_with(
    n_pairs: usize,
    trials_per_pair: usize,
    seed: u64,
    opts: &RecoveryOptions,
) -> Result<RecoveryReport> {
    if n_pairs < MIN_RECOVERY_PAIRS {
        return Err(Error::Precondition(format!(
            "recovery needs at least {MIN_RECOVERY_PAIRS} pairs, got {n_pairs}"
        )));
    }
    let mut prior_rng = chunk_rng(seed, PRIOR_DOMAIN, 0);
    let truths: Vec<SdtParams> = (0..n_pairs).map(|_| opts.prior.draw(&mut prior_rng)).collect();
    let results: Vec<Option<PairRecovery>> = truths
        .par_iter()
        .enumerate()
        .map(|(i, t)| recover_pair(i, *t, trials_per_pair, seed, opts))
        .collect();
    let n_failed = results.iter().filter(|r| r.is_none()).count();
    let pairs: Vec<PairRecovery> = results.into_iter().flatten().collect();
    if pairs.is_empty() {
        return Err(Error::Precondition("every recovery fit failed".into()));
    }
    let k = pairs.len() as f64;
    let params = (0..5)
        .map(|j| {
            let errs: Vec<f64> = pairs.iter().map(|p| p.estimate[j] - p.truth[j]).collect();
            let bias = errs.iter().sum::<f64>() / k;
            let sd = (errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (k - 1.0).max(1.0)).sqrt();
            let flags: Vec<bool> = pairs.iter().filter_map(|p| p.covered[j]).collect();
            ParamRecovery {
                name: RECOVERY_PARAMS[j].to_string(),
                bias,
                sd,
                coverage: fraction(&flags),
                with_interval: flags.len(),
            }
        })
        .collect();
    let joint: Vec<bool> = pairs.iter().map(|p| p.joint_covered == Some(true)).collect();
    Ok(RecoveryReport {
        n_pairs,
        trials_per_pair,
        ci_method: if opts.bootstrap.is_some() {
            CiMethod::Bootstrap
        } else {
            CiMethod::Hessian
        },
        params,
        joint_coverage: fraction(&joint),
        n_failed,
        pairs,
    })
}

fn fraction(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
}

impl RecoveryReport {
    pub fn param(&self, name: &str) -> Option<&ParamRecovery> {
        self.params.iter().find(|p| p.name == name)
    }
}
