use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use teamsdt::aggregation::RuleKind;
use teamsdt::bounds::{rho_star, BoundsInput, BoundsReport};
use teamsdt::inference::{
    compare_models, fit_sdt_with, recovery_study_with, rule_comparison, FitOptions, FitResult, PriorBox,
    RecoveryOptions,
};
use teamsdt::io::{read_trials_file, write_trials};
use teamsdt::montecarlo::{
    kclass_sweep, phase_rows, robustness_grid, robustness_sweep, rule_benchmark, run_sweep, threshold_from_results,
    BenchmarkSpec, CellResult, Family, KClassSpec, SweepSpec, ThresholdOptions,
};
use teamsdt::normal;
use teamsdt::sdt::{simulate_trials, AgentParams, PairConfig};

use crate::config::{required, resolve};
use crate::output::{csv_long, csv_rows, Format, Output};
use crate::{Command, Usage};

pub fn run(cmd: &Command, config: Option<&Path>) -> Result<Output> {
    match cmd {
        Command::Bounds(a) => bounds(resolve(a, config)?),
        Command::Simulate(a) => simulate(resolve(a, config)?),
        Command::Phase(a) => phase(resolve(a, config)?),
        Command::Sweep(a) => sweep(resolve(a, config)?),
        Command::Kclass(a) => kclass(resolve(a, config)?),
        Command::Robust(a) => robust(resolve(a, config)?),
        Command::Fit(a) => fit(resolve(a, config)?),
        Command::Recover(a) => recover(resolve(a, config)?),
        Command::Compare(a) => compare(resolve(a, config)?),
    }
}

fn pair_of(v: &[f64], flag: &str) -> Result<(f64, f64)> {
    match v {
        [x, y] => Ok((*x, *y)),
        [] => Err(Usage(format!("missing required option --{flag}")).into()),
        _ => Err(Usage(format!("--{flag} takes exactly two values")).into()),
    }
}

fn or_default<T: Clone>(v: &[T], default: &[T]) -> Vec<T> {
    if v.is_empty() {
        default.to_vec()
    } else {
        v.to_vec()
    }
}

/// `lo, lo + step, …` up to `hi` inclusive, rounded to kill drift.
fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| ((lo + step * i as f64) * 1e9).round() / 1e9).collect()
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsArgs {
    /// Accuracies of H and M
    #[arg(long, num_args = 2, value_names = ["A_H", "A_M"])]
    pub a: Vec<f64>,
    /// Metacognitive sensitivities of H and M
    #[arg(long, num_args = 2, value_names = ["D_H", "D_M"])]
    pub d: Vec<f64>,
    /// Binary error correlation
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Decision count for the variance bound [default: 1000]
    #[arg(long)]
    pub n: Option<usize>,
}

fn bounds(a: BoundsArgs) -> Result<Output> {
    let (a_h, a_m) = pair_of(&a.a, "a")?;
    let (d_h, d_m) = pair_of(&a.d, "d")?;
    let report = BoundsReport::compute(BoundsInput {
        a_h,
        a_m,
        d_h,
        d_m,
        rho_hm: required(a.rho, "rho")?,
        n: a.n.unwrap_or(1000),
    })?;
    Output::new("bounds", csv_long(&serde_json::to_value(&report)?)?, &report)
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// Sensitivities of H and M
    #[arg(long, num_args = 2, value_names = ["D_H", "D_M"])]
    pub d: Vec<f64>,
    /// Decision thresholds on the confidence scale [default: 0.5 0.5]
    #[arg(long, num_args = 2, value_names = ["TAU_H", "TAU_M"])]
    pub tau: Vec<f64>,
    /// Latent noise correlation
    #[arg(long, allow_negative_numbers = true, conflicts_with = "rho_hm")]
    pub rho_latent: Option<f64>,
    /// Target binary error correlation (calibrated)
    #[arg(long, allow_negative_numbers = true)]
    pub rho_hm: Option<f64>,
    /// P(Y = 1) [default: 0.5]
    #[arg(long)]
    pub prior: Option<f64>,
    /// Number of trials (required)
    #[arg(long)]
    pub trials: Option<usize>,
    /// Random seed (required)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Value of the pair_id column [default: sim]
    #[arg(long)]
    pub pair_id: Option<String>,
}

#[derive(Serialize)]
struct SimulationSummary {
    pair: PairConfig,
    trials: usize,
    seed: u64,
    error_correlation: f64,
    accuracy_h: f64,
    accuracy_m: f64,
}

fn simulate(a: SimulateArgs) -> Result<Output> {
    let seed = required(a.seed, "seed")?;
    let trials = required(a.trials, "trials")?;
    let (d_h, d_m) = pair_of(&a.d, "d")?;
    let (t_h, t_m) = if a.tau.is_empty() { (0.5, 0.5) } else { pair_of(&a.tau, "tau")? };
    for t in [t_h, t_m] {
        if !(t > 0.0 && t < 1.0) {
            bail!(Usage(format!("--tau {t} must lie in (0, 1)")));
        }
    }
    let h = AgentParams::canonical(d_h, normal::inv_cdf(t_h))?;
    let m = AgentParams::canonical(d_m, normal::inv_cdf(t_m))?;
    let prior = a.prior.unwrap_or(0.5);
    let cfg = match (a.rho_latent, a.rho_hm) {
        (Some(_), Some(_)) => bail!(Usage("give either --rho-latent or --rho-hm".into())),
        (_, Some(target)) => PairConfig::with_error_correlation(h, m, target, prior)?,
        (r, None) => PairConfig::with_prior(h, m, r.unwrap_or(0.0), prior)?,
    };
    let data = simulate_trials(&cfg, trials, seed);
    let mut buf = Vec::new();
    write_trials(&mut buf, a.pair_id.as_deref().unwrap_or("sim"), &data)?;
    let summary = SimulationSummary {
        pair: cfg,
        trials,
        seed,
        error_correlation: cfg.error_correlation()?,
        accuracy_h: cfg.accuracy_h(),
        accuracy_m: cfg.accuracy_m(),
    };
    Ok(Output::new("simulate", String::from_utf8(buf)?, &summary)?.prefer(Format::Csv))
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    /// Accuracies of the symmetric pairs [default: 0.5 0.55 0.6 0.65]
    #[arg(long, num_args = 1..)]
    pub a: Vec<f64>,
    /// Target error correlations [default: 0, 0.05, …, 0.95]
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    pub rho: Vec<f64>,
    /// Shared sensitivity; omitted means unbiased agents with d = 2Φ⁻¹(a)
    #[arg(long)]
    pub d: Option<f64>,
    /// Confidence family: gaussian | lognormal | beta
    #[arg(long)]
    pub family: Option<Family>,
    /// Trials per cell [default: 100000]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Replications per cell [default: 5]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Random seed (required)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bootstrap resamples for threshold intervals [default: 1000]
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

impl SweepArgs {
    fn spec(&self) -> Result<(SweepSpec, Vec<f64>, Vec<f64>)> {
        let seed = required(self.seed, "seed")?;
        let accs = or_default(&self.a, &[0.5, 0.55, 0.6, 0.65]);
        let rhos = or_default(&self.rho, &grid(0.0, 0.95, 0.05));
        let spec = SweepSpec::symmetric_grid(
            &accs,
            self.d,
            &rhos,
            self.family.unwrap_or_default(),
            self.trials.unwrap_or(100_000),
            self.reps.unwrap_or(5),
            seed,
        )?;
        Ok((spec, accs, rhos))
    }
}

fn phase(a: SweepArgs) -> Result<Output> {
    let (spec, _, _) = a.spec()?;
    let results = run_sweep(&spec)?;
    let rows = phase_rows(&results);
    #[derive(Serialize)]
    struct Doc<'a> {
        spec: &'a SweepSpec,
        rows: &'a [teamsdt::montecarlo::PhaseRow],
    }
    Output::new("phase", csv_rows(&rows)?, &Doc { spec: &spec, rows: &rows })
}

#[derive(Serialize)]
struct SweepRow {
    cell: usize,
    replication: usize,
    a_h: Option<f64>,
    a_m: Option<f64>,
    rho_target: f64,
    family: Family,
    skipped: Option<String>,
    rho_hm: Option<f64>,
    accuracy_h: Option<f64>,
    accuracy_m: Option<f64>,
    cw: Option<f64>,
    bayes: Option<f64>,
    majority: Option<f64>,
    defer_h: Option<f64>,
    defer_m: Option<f64>,
    best_rule: Option<RuleKind>,
    gain: Option<f64>,
    gain_se: Option<f64>,
}

fn sweep_row(r: &CellResult) -> SweepRow {
    let s = r.stats.as_ref();
    let acc = |k| s.and_then(|s| s.rule(k)).map(|x| x.accuracy);
    SweepRow {
        cell: r.cell,
        replication: r.replication,
        a_h: r.analytic.map(|x| x.accuracy_h),
        a_m: r.analytic.map(|x| x.accuracy_m),
        rho_target: r.spec.rho_hm,
        family: r.spec.family,
        skipped: r.skipped.clone(),
        rho_hm: s.map(|s| s.rho_hm),
        accuracy_h: s.map(|s| s.accuracy_h),
        accuracy_m: s.map(|s| s.accuracy_m),
        cw: acc(RuleKind::ConfidenceWeighted),
        bayes: acc(RuleKind::Bayes),
        majority: acc(RuleKind::Majority),
        defer_h: acc(RuleKind::DeferH),
        defer_m: acc(RuleKind::DeferM),
        best_rule: s.map(|s| s.best_rule),
        gain: s.map(|s| s.gain),
        gain_se: s.map(|s| s.gain_se),
    }
}

#[derive(Serialize)]
struct ThresholdRow {
    a: f64,
    closed_form: Option<f64>,
    regime: Option<String>,
    estimate: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    error: Option<String>,
}

fn sweep(a: SweepArgs) -> Result<Output> {
    let (spec, accs, rhos) = a.spec()?;
    let results = run_sweep(&spec)?;
    let opts = ThresholdOptions {
        bootstrap: a.bootstrap.unwrap_or(1000),
        seed: spec.seed,
        ..Default::default()
    };
    let thresholds: Vec<ThresholdRow> = accs
        .iter()
        .enumerate()
        .map(|(i, &acc)| {
            let cells = i * rhos.len()..(i + 1) * rhos.len();
            let subset: Vec<CellResult> = results.iter().filter(|r| cells.contains(&r.cell)).cloned().collect();
            let closed = rho_star(acc, acc).ok();
            let est = threshold_from_results(&subset, &opts);
            ThresholdRow {
                a: acc,
                closed_form: closed.map(|t| t.value),
                regime: closed.map(|t| format!("{:?}", t.regime)),
                estimate: est.as_ref().ok().map(|e| e.threshold),
                ci_lo: est.as_ref().ok().map(|e| e.ci_lo),
                ci_hi: est.as_ref().ok().map(|e| e.ci_hi),
                error: est.err().map(|e| e.to_string()),
            }
        })
        .collect();
    let rows: Vec<SweepRow> = results.iter().map(sweep_row).collect();
    #[derive(Serialize)]
    struct Doc<'a> {
        spec: &'a SweepSpec,
        thresholds: &'a [ThresholdRow],
        results: &'a [CellResult],
    }
    Output::new(
        "sweep",
        csv_rows(&rows)?,
        &Doc {
            spec: &spec,
            thresholds: &thresholds,
            results: &results,
        },
    )
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct KClassArgs {
    /// Class counts [default: 2 5 10 16]
    #[arg(long, num_args = 1..)]
    pub k: Vec<usize>,
    /// Sensitivities of H and M [default: 1.5 1.0]
    #[arg(long, num_args = 2, value_names = ["D_H", "D_M"])]
    pub d: Vec<f64>,
    /// Latent correlations swept [default: 0, 0.05, …, 0.95]
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    pub latent_corr: Vec<f64>,
    /// Trials per cell [default: 100000]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Replications per cell [default: 3]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Random seed (required)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Binary threshold for the predictions; omitted uses the simulated K = 2 value
    #[arg(long)]
    pub rho_star_binary: Option<f64>,
    /// Bootstrap resamples for threshold intervals [default: 1000]
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

fn kclass(a: KClassArgs) -> Result<Output> {
    let (d_h, d_m) = if a.d.is_empty() { (1.5, 1.0) } else { pair_of(&a.d, "d")? };
    let spec = KClassSpec {
        k_values: or_default(&a.k, &[2, 5, 10, 16]),
        d_h,
        d_m,
        latent_corrs: or_default(&a.latent_corr, &grid(0.0, 0.95, 0.05)),
        trials_per_cell: a.trials.unwrap_or(100_000),
        replications: a.reps.unwrap_or(3),
        seed: required(a.seed, "seed")?,
        rho_star_binary: a.rho_star_binary,
        bootstrap: a.bootstrap.unwrap_or(1000),
    };
    let report = kclass_sweep(&spec)?;
    #[derive(Serialize)]
    struct Row<'a> {
        k: usize,
        predicted: Option<f64>,
        observed: Option<f64>,
        ci_lo: Option<f64>,
        ci_hi: Option<f64>,
        error: Option<&'a str>,
    }
    let rows: Vec<Row> = report
        .rows
        .iter()
        .map(|r| Row {
            k: r.k,
            predicted: r.predicted,
            observed: r.observed,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            error: r.error.as_deref(),
        })
        .collect();
    Output::new("kclass", csv_rows(&rows)?, &report)
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RobustArgs {
    /// Confidence family: gaussian | lognormal | beta [default: gaussian]
    #[arg(long)]
    pub family: Option<Family>,
    /// Trials per cell [default: 50000]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Replications per cell [default: 3]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Random seed (required)
    #[arg(long)]
    pub seed: Option<u64>,
}

fn robust(a: RobustArgs) -> Result<Output> {
    let family = a.family.unwrap_or_default();
    let spec = robustness_grid(
        family,
        a.trials.unwrap_or(50_000),
        a.reps.unwrap_or(3),
        required(a.seed, "seed")?,
    )?;
    let report = robustness_sweep(family, &spec)?;
    Output::new("robust", csv_rows(&report.rows)?, &report)
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    /// Trial log (CSV)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Parametric bootstrap replicates instead of Hessian intervals
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Seed for bootstrap replicates
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fit all rows as one pair
    #[arg(long)]
    #[serde(default)]
    pub pooled: bool,
}

#[derive(Serialize)]
struct PairFit {
    pair_id: String,
    trials: usize,
    fit: Option<FitResult>,
    error: Option<String>,
}

#[derive(Serialize)]
struct FitRow<'a> {
    pair_id: &'a str,
    parameter: &'static str,
    estimate: f64,
    se: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    status: String,
}

fn fit(a: FitArgs) -> Result<Output> {
    let input = required(a.input, "input")?;
    if a.bootstrap.is_some() && a.seed.is_none() {
        bail!(Usage("--bootstrap needs --seed".into()));
    }
    let log = read_trials_file(&input)?;
    if log.k != 2 {
        bail!(Usage(format!("fitting needs a binary log, manifest declares k = {}", log.k)));
    }
    if log.rows.is_empty() {
        return Err(teamsdt::Error::EmptySample.into());
    }
    let groups = if a.pooled {
        vec![("all".to_string(), log.records())]
    } else {
        log.by_pair()
    };
    let opts = FitOptions {
        bootstrap: a.bootstrap,
        seed: a.seed.unwrap_or(0),
        ..Default::default()
    };
    let mut fits = Vec::with_capacity(groups.len());
    let mut first_err = None;
    for (pair_id, records) in groups {
        match fit_sdt_with(&records, &opts) {
            Ok(f) => fits.push(PairFit {
                pair_id,
                trials: records.len(),
                fit: Some(f),
                error: None,
            }),
            Err(e) => {
                fits.push(PairFit {
                    pair_id,
                    trials: records.len(),
                    fit: None,
                    error: Some(e.to_string()),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    if fits.iter().all(|f| f.fit.is_none()) {
        return Err(first_err.expect("at least one group").into());
    }
    let mut rows = Vec::new();
    for pf in &fits {
        let Some(f) = &pf.fit else { continue };
        let ci = &f.ci_95;
        for (name, p) in [
            ("d_h", ci.d_h),
            ("d_m", ci.d_m),
            ("rho_latent", ci.rho_latent),
            ("tau_h", ci.tau_h),
            ("tau_m", ci.tau_m),
            ("rho_hm", ci.rho_hm),
        ] {
            rows.push(FitRow {
                pair_id: &pf.pair_id,
                parameter: name,
                estimate: p.estimate,
                se: p.se,
                ci_lo: p.ci_lo,
                ci_hi: p.ci_hi,
                status: format!("{:?}", f.status).to_lowercase(),
            });
        }
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        malformed: &'a [teamsdt::io::RowError],
        fits: &'a [PairFit],
    }
    Output::new(
        "fit",
        csv_rows(&rows)?,
        &Doc {
            malformed: &log.malformed,
            fits: &fits,
        },
    )
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverArgs {
    /// Synthetic pairs [default: 1000]
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Trials per pair [default: 2000]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Random seed (required)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parametric bootstrap replicates per pair instead of Hessian intervals
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

fn recover(a: RecoverArgs) -> Result<Output> {
    let report = recovery_study_with(
        a.pairs.unwrap_or(1000),
        a.trials.unwrap_or(2000),
        required(a.seed, "seed")?,
        &RecoveryOptions {
            prior: PriorBox::default(),
            bootstrap: a.bootstrap,
        },
    )?;
    Output::new("recover", csv_rows(&report.params)?, &report)
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CompareArgs {
    /// Trial log (CSV); omitted runs the synthetic rule benchmark
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Random seed (required)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Benchmark configurations [default: 50]
    #[arg(long)]
    pub configs: Option<usize>,
    /// Benchmark trials per configuration [default: 20000]
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Serialize, Default)]
struct CompareRow {
    kind: &'static str,
    name: String,
    n_params: Option<usize>,
    log_likelihood: Option<f64>,
    bic: Option<f64>,
    delta_bic: Option<f64>,
    accuracy: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    note: Option<String>,
}

fn compare(a: CompareArgs) -> Result<Output> {
    let seed = required(a.seed, "seed")?;
    let Some(input) = a.input else {
        let report = rule_benchmark(&BenchmarkSpec {
            configs: a.configs.unwrap_or(50),
            trials_per_config: a.trials.unwrap_or(20_000),
            seed,
            ..Default::default()
        })?;
        let rows: Vec<CompareRow> = report
            .means
            .iter()
            .map(|m| CompareRow {
                kind: "rule",
                name: m.rule.clone(),
                accuracy: Some(m.mean_accuracy),
                ci_lo: Some(m.mean_accuracy - 1.96 * m.se),
                ci_hi: Some(m.mean_accuracy + 1.96 * m.se),
                ..Default::default()
            })
            .collect();
        return Output::new("compare", csv_rows(&rows)?, &report);
    };
    let log = read_trials_file(&input)?;
    if log.k != 2 {
        bail!(Usage(format!("comparison needs a binary log, manifest declares k = {}", log.k)));
    }
    let records = log.records();
    let models = compare_models(&records)?;
    let fit = fit_sdt_with(
        &records,
        &FitOptions {
            seed,
            ..Default::default()
        },
    )?;
    let rules = rule_comparison(&records, &fit, seed)?;
    let mut rows: Vec<CompareRow> = models
        .models
        .iter()
        .map(|m| CompareRow {
            kind: "model",
            name: m.model.as_str().to_string(),
            n_params: Some(m.n_params),
            log_likelihood: m.log_likelihood,
            bic: m.bic,
            delta_bic: m.delta_bic,
            note: m.skipped.clone(),
            ..Default::default()
        })
        .collect();
    rows.extend(rules.iter().map(|r| CompareRow {
        kind: "rule",
        name: r.rule.to_string(),
        accuracy: Some(r.accuracy),
        ci_lo: Some(r.accuracy - r.ci_half_width),
        ci_hi: Some(r.accuracy + r.ci_half_width),
        ..Default::default()
    }));
    #[derive(Serialize)]
    struct Doc<'a> {
        models: &'a teamsdt::inference::ModelComparison,
        rules: &'a [teamsdt::inference::RuleScore],
        fit: &'a FitResult,
    }
    Output::new(
        "compare",
        csv_rows(&rows)?,
        &Doc {
            models: &models,
            rules: &rules,
            fit: &fit,
        },
    )
}
