//! Maximum-likelihood fit of the two-agent model.

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::likelihood::{log_likelihood, SdtParams, SufficientStats};
use crate::error::{Error, Result};
use crate::normal;
use crate::rng::derive_seed;
use crate::sdt::{simulate_trials, TrialRecord};

/// Smallest sample accepted by [`fit_sdt`].
pub const MIN_FIT_TRIALS: usize = 100;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIter,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Hessian,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub starts: usize,
    pub max_iters: u64,
    /// Simplex standard-deviation tolerance on the log-likelihood.
    pub tolerance: f64,
    /// Parametric bootstrap replicates; `None` uses the Hessian.
    pub bootstrap: Option<usize>,
    pub seed: u64,
    /// Class prior used for the derived error correlation; `None` uses the
    /// observed label frequency.
    pub class_prior: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iters: 4000,
            tolerance: 1e-8,
            bootstrap: None,
            seed: 0,
            class_prior: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

impl ParamEstimate {
    fn wald(estimate: f64, var: Option<f64>) -> Self {
        let se = var.filter(|v| *v >= 0.0 && v.is_finite()).map(f64::sqrt);
        Self {
            estimate,
            se,
            ci_lo: se.map(|s| estimate - Z95 * s),
            ci_hi: se.map(|s| estimate + Z95 * s),
        }
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        Some(self.ci_lo? <= truth && truth <= self.ci_hi?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitIntervals {
    pub d_h: ParamEstimate,
    pub d_m: ParamEstimate,
    pub rho_latent: ParamEstimate,
    pub tau_h: ParamEstimate,
    pub tau_m: ParamEstimate,
    pub rho_hm: ParamEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimates: SdtParams,
    /// Binary error correlation implied by the estimates.
    pub rho_hm: Option<f64>,
    pub log_likelihood: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n: usize,
    /// Records dropped because prediction and confidence disagree.
    pub rejected: usize,
    pub class_prior: f64,
    pub ci_95: FitIntervals,
    pub ci_method: CiMethod,
    /// Covariance of `(d_h, d_m, rho_hm, tau_h, tau_m)`.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub status: FitStatus,
    /// The 95% interval of `d` reaches 0: confidence carries no detectable
    /// information about correctness.
    pub uninformative_h: bool,
    pub uninformative_m: bool,
}

/// 95% quantile of χ² with 5 degrees of freedom.
pub const CHI2_5_95: f64 = 11.070_497_693_516_351;

impl FitResult {
    /// Whether `(d_h, d_m, rho_hm, tau_h, tau_m)` lies in the 95% Wald ellipsoid.
    pub fn joint_covers(&self, truth: [f64; 5]) -> Option<bool> {
        let cov = self.covariance.as_ref()?;
        let m = DMatrix::from_fn(5, 5, |i, j| cov[i][j]);
        let est = [
            self.estimates.d_h,
            self.estimates.d_m,
            self.rho_hm?,
            self.estimates.tau_h,
            self.estimates.tau_m,
        ];
        let diff = DVector::from_fn(5, |i, _| est[i] - truth[i]);
        let chol = m.cholesky()?;
        let sol = chol.solve(&diff);
        Some(diff.dot(&sol) <= CHI2_5_95)
    }
}

// Unconstrained coordinates: (d_h, d_m, atanh r, logit τ_h, logit τ_m), with
// d = |x| so the sign of a sensitivity never leaves the model.
fn to_params(x: &[f64]) -> SdtParams {
    let logistic = |v: f64| 1.0 / (1.0 + (-v).exp());
    let clamp_open = |v: f64| v.clamp(1e-12, 1.0 - 1e-12);
    SdtParams {
        d_h: x[0].abs(),
        d_m: x[1].abs(),
        rho_latent: x[2].tanh().clamp(-1.0 + 1e-12, 1.0 - 1e-12),
        tau_h: clamp_open(logistic(x[3])),
        tau_m: clamp_open(logistic(x[4])),
    }
}

fn to_unconstrained(p: &SdtParams) -> Vec<f64> {
    let logit = |v: f64| (v / (1.0 - v)).ln();
    vec![p.d_h, p.d_m, p.rho_latent.atanh(), logit(p.tau_h), logit(p.tau_m)]
}

struct NegLogLik<'a> {
    stats: &'a SufficientStats,
}

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(-log_likelihood(&to_params(x), self.stats))
    }
}

/// Radical-inverse (Halton) coordinate.
fn halton(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Deterministic starting points spread over the prior box
/// `d ∈ [0.5, 2.5]`, `ρ ∈ [0, 0.9]`, `τ ∈ [0.3, 0.7]`.
pub fn start_points(k: usize) -> Vec<SdtParams> {
    (1..=k as u64)
        .map(|i| SdtParams {
            d_h: 0.5 + 2.0 * halton(i, 2),
            d_m: 0.5 + 2.0 * halton(i, 3),
            rho_latent: 0.9 * halton(i, 5),
            tau_h: 0.3 + 0.4 * halton(i, 7),
            tau_m: 0.3 + 0.4 * halton(i, 11),
        })
        .collect()
}

struct LocalOptimum {
    params: SdtParams,
    ll: f64,
    max_iter: bool,
}

fn local_fit(stats: &SufficientStats, start: &SdtParams, opts: &FitOptions) -> Result<LocalOptimum> {
    let x0 = to_unconstrained(start);
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut v = x0.clone();
        v[i] += if i < 2 { 0.25 } else { 0.3 };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(opts.tolerance)
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let res = Executor::new(NegLogLik { stats }, solver)
        .configure(|s| s.max_iters(opts.max_iters))
        .run()
        .map_err(|e| Error::Precondition(format!("optimizer failed: {e}")))?;
    let st = res.state();
    let best = st
        .get_best_param()
        .cloned()
        .ok_or_else(|| Error::Precondition("optimizer returned no parameters".into()))?;
    let max_iter = matches!(
        st.get_termination_status(),
        TerminationStatus::Terminated(TerminationReason::MaxItersReached)
    );
    let params = to_params(&best);
    Ok(LocalOptimum {
        params,
        ll: log_likelihood(&params, stats),
        max_iter,
    })
}

/// Step sizes for finite differences in natural coordinates.
fn steps(p: &[f64; 5]) -> [f64; 5] {
    let tau_step = |t: f64| 1e-4 * t.min(1.0 - t).min(0.1) * 10.0;
    [
        1e-4,
        1e-4,
        1e-4 * (1.0 - p[2].abs()).min(0.1) * 10.0,
        tau_step(p[3]),
        tau_step(p[4]),
    ]
}

/// Observed information (negative Hessian of the log-likelihood) by central
/// differences. Sensitivities are evaluated as signed values so points at
/// `d = 0` stay interior.
fn observed_information(p: &SdtParams, stats: &SufficientStats) -> DMatrix<f64> {
    let base = p.to_array();
    let h = steps(&base);
    let f = |v: [f64; 5]| log_likelihood(&SdtParams::from_array(v), stats);
    let f0 = f(base);
    let mut info = DMatrix::zeros(5, 5);
    for i in 0..5 {
        let mut up = base;
        let mut dn = base;
        up[i] += h[i];
        dn[i] -= h[i];
        info[(i, i)] = -(f(up) - 2.0 * f0 + f(dn)) / (h[i] * h[i]);
        for j in 0..i {
            let mut pp = base;
            let mut pm = base;
            let mut mp = base;
            let mut mm = base;
            pp[i] += h[i];
            pp[j] += h[j];
            pm[i] += h[i];
            pm[j] -= h[j];
            mp[i] -= h[i];
            mp[j] += h[j];
            mm[i] -= h[i];
            mm[j] -= h[j];
            let v = -(f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h[i] * h[j]);
            info[(i, j)] = v;
            info[(j, i)] = v;
        }
    }
    info
}

/// Gradient of the derived error correlation with respect to the five
/// natural parameters.
fn rho_hm_gradient(p: &SdtParams, prior: f64) -> Option<[f64; 5]> {
    let base = p.to_array();
    let h = steps(&base);
    let mut g = [0.0; 5];
    for i in 0..5 {
        let mut up = base;
        let mut dn = base;
        up[i] += h[i];
        dn[i] -= h[i];
        // Keep sensitivities non-negative for the pair constructor.
        if i < 2 && dn[i] < 0.0 {
            dn[i] = 0.0;
            up[i] = 2.0 * h[i];
        }
        let fu = SdtParams::from_array(up).error_correlation(prior).ok()?;
        let fd = SdtParams::from_array(dn).error_correlation(prior).ok()?;
        g[i] = (fu - fd) / (up[i] - dn[i]);
    }
    Some(g)
}

/// Covariance of the reported vector `(d_h, d_m, rho_hm, tau_h, tau_m)` from
/// the covariance of the natural parameters.
fn reported_covariance(cov: &DMatrix<f64>, grad: &[f64; 5]) -> DMatrix<f64> {
    let mut j = DMatrix::identity(5, 5);
    for k in 0..5 {
        j[(2, k)] = grad[k];
    }
    &j * cov * j.transpose()
}

fn degenerate(stats: &SufficientStats) -> bool {
    let n = stats.n;
    stats.h_errors == 0 || stats.m_errors == 0 || stats.h_errors == n || stats.m_errors == n
        || stats.classes.iter().any(|c| c.n == 0.0)
}

struct Optimum {
    params: SdtParams,
    ll: f64,
    max_iter: bool,
}

fn optimise(stats: &SufficientStats, starts: &[SdtParams], opts: &FitOptions) -> Result<Optimum> {
    let mut best: Option<LocalOptimum> = None;
    let mut all_max_iter = true;
    for s in starts {
        let local = local_fit(stats, s, opts)?;
        all_max_iter &= local.max_iter;
        if best.as_ref().is_none_or(|b| local.ll > b.ll) {
            best = Some(local);
        }
    }
    let best = best.ok_or_else(|| Error::invalid("starts", "need at least one start"))?;
    Ok(Optimum {
        params: best.params,
        ll: best.ll,
        max_iter: all_max_iter,
    })
}

pub fn fit_sdt(trials: &[TrialRecord]) -> Result<FitResult> {
    fit_sdt_with(trials, &FitOptions::default())
}

pub fn fit_sdt_with(trials: &[TrialRecord], opts: &FitOptions) -> Result<FitResult> {
    if trials.is_empty() {
        return Err(Error::EmptySample);
    }
    if trials.len() < MIN_FIT_TRIALS {
        return Err(Error::Precondition(format!(
            "fitting needs at least {MIN_FIT_TRIALS} trials, got {}",
            trials.len()
        )));
    }
    let stats = SufficientStats::from_trials(trials)?;
    if stats.n < MIN_FIT_TRIALS {
        return Err(Error::Precondition(format!(
            "only {} consistent trials after rejecting {}",
            stats.n, stats.rejected
        )));
    }
    if opts.starts == 0 {
        return Err(Error::invalid("starts", "need at least one start"));
    }
    let prior = opts.class_prior.unwrap_or_else(|| stats.class_one_rate().clamp(1e-6, 1.0 - 1e-6));
    let opt = optimise(&stats, &start_points(opts.starts), opts)?;
    let p = opt.params;
    let n = stats.n as f64;
    let rho_hm = p.error_correlation(prior).ok();

    let at_edge = p.rho_latent.abs() > 0.99 || [p.tau_h, p.tau_m].iter().any(|t| *t < 1e-3 || *t > 1.0 - 1e-3);
    let status = if degenerate(&stats) || at_edge {
        FitStatus::Boundary
    } else if opt.max_iter {
        FitStatus::MaxIter
    } else {
        FitStatus::Converged
    };

    let (natural_cov, ci_method) = match opts.bootstrap {
        None => (
            observed_information(&p, &stats).try_inverse().filter(|c| (0..5).all(|i| c[(i, i)] > 0.0)),
            CiMethod::Hessian,
        ),
        Some(b) => (bootstrap_covariance(&p, prior, stats.n, b, opts)?, CiMethod::Bootstrap),
    };
    let grad = rho_hm_gradient(&p, prior);
    let reported = match (&natural_cov, grad) {
        (Some(c), Some(g)) => Some(reported_covariance(c, &g)),
        _ => None,
    };
    let var = |m: &Option<DMatrix<f64>>, i: usize| m.as_ref().map(|c| c[(i, i)]);
    let ci_95 = FitIntervals {
        d_h: ParamEstimate::wald(p.d_h, var(&natural_cov, 0)),
        d_m: ParamEstimate::wald(p.d_m, var(&natural_cov, 1)),
        rho_latent: ParamEstimate::wald(p.rho_latent, var(&natural_cov, 2)),
        tau_h: ParamEstimate::wald(p.tau_h, var(&natural_cov, 3)),
        tau_m: ParamEstimate::wald(p.tau_m, var(&natural_cov, 4)),
        rho_hm: ParamEstimate::wald(rho_hm.unwrap_or(f64::NAN), var(&reported, 2).filter(|_| rho_hm.is_some())),
    };
    let uninformative = |e: &ParamEstimate| e.ci_lo.is_none_or(|lo| lo <= 0.0);
    Ok(FitResult {
        estimates: p,
        rho_hm,
        log_likelihood: opt.ll,
        bic: -2.0 * opt.ll + 5.0 * n.ln(),
        n_params: 5,
        n: stats.n,
        rejected: stats.rejected,
        class_prior: prior,
        uninformative_h: uninformative(&ci_95.d_h),
        uninformative_m: uninformative(&ci_95.d_m),
        ci_95,
        ci_method,
        covariance: reported.map(|m| (0..5).map(|i| (0..5).map(|j| m[(i, j)]).collect()).collect()),
        status,
    })
}

/// Parametric bootstrap covariance of the natural parameters: refits on
/// data simulated from the estimate, starting from the estimate.
fn bootstrap_covariance(
    p: &SdtParams,
    prior: f64,
    n: usize,
    b: usize,
    opts: &FitOptions,
) -> Result<Option<DMatrix<f64>>> {
    if b < 2 {
        return Err(Error::invalid("bootstrap", "need at least 2 replicates"));
    }
    let cfg = p.pair(prior)?;
    let inner = FitOptions {
        bootstrap: None,
        ..*opts
    };
    let draws: Vec<[f64; 5]> = (0..b)
        .into_par_iter()
        .filter_map(|i| {
            let trials = simulate_trials(&cfg, n, derive_seed(opts.seed, &[0xb0, i as u64]));
            let stats = SufficientStats::from_trials(&trials).ok()?;
            optimise(&stats, std::slice::from_ref(p), &inner).ok().map(|o| o.params.to_array())
        })
        .collect();
    if draws.len() < 2 {
        return Ok(None);
    }
    let k = draws.len() as f64;
    let mean: Vec<f64> = (0..5).map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / k).collect();
    Ok(Some(DMatrix::from_fn(5, 5, |i, j| {
        draws.iter().map(|d| (d[i] - mean[i]) * (d[j] - mean[j])).sum::<f64>() / (k - 1.0)
    })))
}

/// Moment estimates used as a closed-form check: with unit noise the class
/// means of `z` determine `d` and `τ` exactly.
pub fn moment_estimates(stats: &SufficientStats) -> Option<(f64, f64, f64, f64)> {
    let [c0, c1] = stats.classes;
    if c0.n == 0.0 || c1.n == 0.0 {
        return None;
    }
    let (h0, h1) = (c0.sh / c0.n, c1.sh / c1.n);
    let (m0, m1) = (c0.sm / c0.n, c1.sm / c1.n);
    Some((
        h1 - h0,
        m1 - m0,
        normal::cdf(-0.5 * (h1 + h0)),
        normal::cdf(-0.5 * (m1 + m0)),
    ))
}
