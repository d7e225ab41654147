//! Grid sweeps: one streaming simulation per cell and replication.

use serde::{Deserialize, Serialize};

use super::family::{Family, FamilySampler};
use crate::aggregation::{Agent, AggregationRule, BayesModel, RuleContext, RuleKind};
use crate::bounds;
use crate::error::{Error, Result};
use crate::normal;
use crate::rng::{self, derive_seed};
use crate::sdt::{AgentParams, PairConfig, TrialRecord, DEFAULT_PRIOR};

const SWEEP_DOMAIN: u64 = 0x5357454550;
const TIE_DOMAIN: u64 = 0x544945;

/// Rules evaluated in every cell, in report order.
pub const CELL_RULES: [RuleKind; 5] = [
    RuleKind::ConfidenceWeighted,
    RuleKind::Bayes,
    RuleKind::Majority,
    RuleKind::DeferH,
    RuleKind::DeferM,
];

/// Rules that actually combine the two agents; the cell gain is taken over these.
pub const COMBINING_RULES: [RuleKind; 3] =
    [RuleKind::ConfidenceWeighted, RuleKind::Bayes, RuleKind::Majority];

/// One point of a sweep grid. `rho_hm` is the target binary error
/// correlation; the latent correlation is calibrated to hit it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub agent_h: AgentParams,
    pub agent_m: AgentParams,
    pub rho_hm: f64,
    #[serde(default)]
    pub family: Family,
    #[serde(default = "default_prior")]
    pub class_prior: f64,
}

fn default_prior() -> f64 {
    DEFAULT_PRIOR
}

impl CellSpec {
    pub fn new(agent_h: AgentParams, agent_m: AgentParams, rho_hm: f64) -> Self {
        Self {
            agent_h,
            agent_m,
            rho_hm,
            family: Family::Gaussian,
            class_prior: DEFAULT_PRIOR,
        }
    }

    /// Equal-accuracy pair at accuracy `a`; see [`symmetric_pair`].
    pub fn symmetric(a: f64, d: Option<f64>, rho_hm: f64) -> Result<Self> {
        let (h, m) = symmetric_pair(a, d)?;
        Ok(Self::new(h, m, rho_hm))
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn d_h(&self) -> f64 {
        self.agent_h.metacog_sensitivity()
    }

    pub fn d_m(&self) -> f64 {
        self.agent_m.metacog_sensitivity()
    }

    /// Calibrated pair for this cell.
    pub fn pair(&self) -> Result<PairConfig> {
        PairConfig::with_error_correlation(self.agent_h, self.agent_m, self.rho_hm, self.class_prior)
    }
}

/// Two identical agents with accuracy `a`. Without `d` both are unbiased
/// with `d = 2Φ⁻¹(a)`; with a larger `d` both thresholds shift up to reach
/// `a`. A shared bias forces shared errors, so low error correlations may
/// then be unreachable.
pub fn symmetric_pair(a: f64, d: Option<f64>) -> Result<(AgentParams, AgentParams)> {
    match d {
        Some(d) => {
            let agent = AgentParams::with_accuracy(d, a)?;
            Ok((agent, agent))
        }
        None => {
            if !(0.5..1.0).contains(&a) {
                return Err(Error::invalid("accuracy", format!("{a} outside [0.5, 1)")));
            }
            let agent = AgentParams::canonical(2.0 * normal::inv_cdf(a), 0.0)?;
            Ok((agent, agent))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub cells: Vec<CellSpec>,
    pub trials_per_cell: usize,
    pub replications: usize,
    pub seed: u64,
}

impl SweepSpec {
    /// Full grid of symmetric pairs over accuracies × error correlations.
    pub fn symmetric_grid(
        accuracies: &[f64],
        d: Option<f64>,
        rhos: &[f64],
        family: Family,
        trials_per_cell: usize,
        replications: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut cells = Vec::with_capacity(accuracies.len() * rhos.len());
        for &a in accuracies {
            let (h, m) = symmetric_pair(a, d)?;
            for &rho in rhos {
                cells.push(CellSpec::new(h, m, rho).with_family(family));
            }
        }
        Ok(Self {
            cells,
            trials_per_cell,
            replications,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::invalid("grid", "sweep grid is empty"));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::invalid("trials_per_cell", "must be > 0"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications", "must be > 0"));
        }
        Ok(())
    }
}

/// Accuracy of one rule in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleResult {
    pub rule: RuleKind,
    pub accuracy: f64,
    pub ci_half_width: f64,
    /// Accuracy minus the sample accuracy of the better agent.
    pub gain: f64,
    /// Standard error of `gain` from the paired per-trial differences.
    pub gain_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub n: usize,
    pub accuracy_h: f64,
    pub accuracy_m: f64,
    pub a_star: f64,
    /// Sample correlation of the two error indicators.
    pub rho_hm: f64,
    pub p_disagree: f64,
    /// `P(selected agent correct | disagreement)` for confidence weighting.
    pub q_star: Option<f64>,
    pub rules: Vec<RuleResult>,
    /// Best combining rule.
    pub best_rule: RuleKind,
    pub gain: f64,
    pub gain_se: f64,
    pub gain_ci_half_width: f64,
}

impl CellStats {
    pub fn rule(&self, kind: RuleKind) -> Option<&RuleResult> {
        self.rules.iter().find(|r| r.rule == kind)
    }

    /// Largest gain over every evaluated rule, with its standard error.
    pub fn max_gain_all_rules(&self) -> (f64, f64) {
        self.rules
            .iter()
            .map(|r| (r.gain, r.gain_se))
            .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: usize,
    pub replication: usize,
    pub spec: CellSpec,
    pub latent_corr: Option<f64>,
    /// Model-implied accuracies and error correlation.
    pub analytic: Option<Analytic>,
    pub skipped: Option<String>,
    pub stats: Option<CellStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Analytic {
    pub accuracy_h: f64,
    pub accuracy_m: f64,
    pub rho_hm: f64,
}

/// Rule set for a calibrated cell.
pub fn cell_rules(cfg: &PairConfig) -> Result<Vec<(RuleKind, AggregationRule)>> {
    let (d_h, d_m) = (cfg.agent_h.metacog_sensitivity(), cfg.agent_m.metacog_sensitivity());
    let rho = cfg.error_correlation().unwrap_or(0.0);
    let cw = match bounds::optimal_weights(d_h, d_m, rho) {
        Ok((w_h, w_m)) if w_h > 0.0 || w_m > 0.0 => AggregationRule::confidence_weighted(w_h, w_m)?,
        // Both agents blind: any positive weights select identically.
        _ => AggregationRule::confidence_weighted(1.0, 1.0)?,
    };
    Ok(vec![
        (RuleKind::ConfidenceWeighted, cw),
        (RuleKind::Bayes, AggregationRule::BayesAverage(BayesModel::from_pair(cfg)?)),
        (RuleKind::Majority, AggregationRule::MajorityRandomTiebreak),
        (RuleKind::DeferH, AggregationRule::DeferTo { agent: Agent::H }),
        (RuleKind::DeferM, AggregationRule::DeferTo { agent: Agent::M }),
    ])
}

/// Streaming counts for one cell.
#[derive(Debug, Clone, Default)]
pub(crate) struct Counts {
    pub n: u64,
    pub h: u64,
    pub m: u64,
    pub both_wrong: u64,
    pub disagree: u64,
    /// Per rule: correct, and trials where rule and agent differ in correctness.
    pub rule_correct: Vec<u64>,
    pub rule_vs_h: Vec<u64>,
    pub rule_vs_m: Vec<u64>,
    /// Confidence-weighted selection correct on a disagreement.
    pub cw_on_disagree: u64,
}

impl Counts {
    pub fn new(rules: usize) -> Self {
        Self {
            rule_correct: vec![0; rules],
            rule_vs_h: vec![0; rules],
            rule_vs_m: vec![0; rules],
            ..Default::default()
        }
    }

    pub fn push(&mut self, t: &TrialRecord, team: &[u8]) {
        let (hc, mc) = (t.h_correct(), t.m_correct());
        self.n += 1;
        self.h += u64::from(hc);
        self.m += u64::from(mc);
        self.both_wrong += u64::from(!hc && !mc);
        self.disagree += u64::from(!t.agree());
        for (i, &label) in team.iter().enumerate() {
            let ok = label == t.y;
            self.rule_correct[i] += u64::from(ok);
            self.rule_vs_h[i] += u64::from(ok != hc);
            self.rule_vs_m[i] += u64::from(ok != mc);
        }
        if !t.agree() && team.first().is_some_and(|&l| l == t.y) {
            self.cw_on_disagree += 1;
        }
    }

    pub fn merge(&mut self, o: &Counts) {
        self.n += o.n;
        self.h += o.h;
        self.m += o.m;
        self.both_wrong += o.both_wrong;
        self.disagree += o.disagree;
        self.cw_on_disagree += o.cw_on_disagree;
        for i in 0..self.rule_correct.len() {
            self.rule_correct[i] += o.rule_correct[i];
            self.rule_vs_h[i] += o.rule_vs_h[i];
            self.rule_vs_m[i] += o.rule_vs_m[i];
        }
    }

    pub fn error_correlation(&self) -> f64 {
        let n = self.n as f64;
        let e_h = 1.0 - self.h as f64 / n;
        let e_m = 1.0 - self.m as f64 / n;
        let denom = (e_h * (1.0 - e_h) * e_m * (1.0 - e_m)).sqrt();
        if denom > 0.0 {
            (self.both_wrong as f64 / n - e_h * e_m) / denom
        } else {
            0.0
        }
    }

    /// Stats with rule `i` labelled by `kinds[i]`; index 0 must be the
    /// confidence-weighted rule.
    pub fn stats(&self, kinds: &[RuleKind]) -> CellStats {
        let n = self.n as f64;
        let acc_h = self.h as f64 / n;
        let acc_m = self.m as f64 / n;
        let h_best = self.h >= self.m;
        let a_star = acc_h.max(acc_m);
        let rules: Vec<RuleResult> = kinds
            .iter()
            .enumerate()
            .map(|(i, &rule)| {
                let acc = self.rule_correct[i] as f64 / n;
                let gain = acc - a_star;
                let sq = if h_best { self.rule_vs_h[i] } else { self.rule_vs_m[i] } as f64 / n;
                let var = (sq - gain * gain).max(0.0);
                RuleResult {
                    rule,
                    accuracy: acc,
                    ci_half_width: 1.96 * (acc * (1.0 - acc) / n).sqrt(),
                    gain,
                    gain_se: (var / n).sqrt(),
                }
            })
            .collect();
        let best = rules
            .iter()
            .filter(|r| COMBINING_RULES.contains(&r.rule))
            .fold(None::<&RuleResult>, |b, r| match b {
                Some(b) if b.gain >= r.gain => Some(b),
                _ => Some(r),
            })
            .copied()
            .unwrap_or(rules[0]);
        CellStats {
            n: self.n as usize,
            accuracy_h: acc_h,
            accuracy_m: acc_m,
            a_star,
            rho_hm: self.error_correlation(),
            p_disagree: self.disagree as f64 / n,
            q_star: (self.disagree > 0).then(|| self.cw_on_disagree as f64 / self.disagree as f64),
            best_rule: best.rule,
            gain: best.gain,
            gain_se: best.gain_se,
            gain_ci_half_width: 1.96 * best.gain_se,
            rules,
        }
    }
}

/// Simulates one calibrated cell.
pub fn simulate_cell(cfg: &PairConfig, family: Family, n: usize, seed: u64) -> Result<CellStats> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let sampler = FamilySampler::new(*cfg, family)?;
    let rules = cell_rules(cfg)?;
    let ctx = RuleContext::new(derive_seed(seed, &[TIE_DOMAIN]));
    let kinds: Vec<RuleKind> = rules.iter().map(|r| r.0).collect();
    let parts = rng::map_chunks(n, |chunk, range| {
        let mut rng = rng::chunk_rng(seed, SWEEP_DOMAIN, chunk);
        let mut counts = Counts::new(rules.len());
        let mut team = vec![0u8; rules.len()];
        for i in range {
            let t = sampler.sample(&mut rng);
            for (slot, (_, rule)) in team.iter_mut().zip(&rules) {
                *slot = rule.apply(&t, i as u64, &ctx);
            }
            counts.push(&t, &team);
        }
        counts
    });
    let mut total = Counts::new(rules.len());
    for p in &parts {
        total.merge(p);
    }
    Ok(total.stats(&kinds))
}

fn cell_seed(seed: u64, cell: usize, rep: usize) -> u64 {
    derive_seed(seed, &[cell as u64, rep as u64])
}

/// Runs every cell × replication. Cells whose target correlation cannot be
/// reached are reported as skipped.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.cells.len() * spec.replications);
    for (ci, cell) in spec.cells.iter().enumerate() {
        let prepared = cell.pair().and_then(|cfg| {
            let analytic = Analytic {
                accuracy_h: cfg.accuracy_h(),
                accuracy_m: cfg.accuracy_m(),
                rho_hm: cfg.error_correlation()?,
            };
            Ok((cfg, analytic))
        });
        for rep in 0..spec.replications {
            let mut res = CellResult {
                cell: ci,
                replication: rep,
                spec: *cell,
                latent_corr: None,
                analytic: None,
                skipped: None,
                stats: None,
            };
            match &prepared {
                Ok((cfg, analytic)) => {
                    res.latent_corr = Some(cfg.latent_corr);
                    res.analytic = Some(*analytic);
                    match simulate_cell(cfg, cell.family, spec.trials_per_cell, cell_seed(spec.seed, ci, rep)) {
                        Ok(s) => res.stats = Some(s),
                        Err(e) => res.skipped = Some(e.to_string()),
                    }
                }
                Err(e) => res.skipped = Some(e.to_string()),
            }
            if let Some(reason) = &res.skipped {
                log::warn!("cell {ci} replication {rep} skipped: {reason}");
            }
            out.push(res);
        }
    }
    Ok(out)
}
