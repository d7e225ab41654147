//! Closed-form team-accuracy predictions against simulations under
//! alternative confidence families.

use serde::{Deserialize, Serialize};

use super::cell::{run_sweep, CellSpec, SweepSpec};
use super::family::Family;
use super::kclass::pearson;
use crate::aggregation::RuleKind;
use crate::bounds::{BoundsInput, BoundsReport};
use crate::error::{Error, Result};
use crate::normal;
use crate::sdt::AgentParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustRow {
    pub cell: usize,
    pub replication: usize,
    pub d_h: f64,
    pub d_m: f64,
    pub rho_hm: f64,
    pub predicted: f64,
    pub simulated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub family: Family,
    pub rows: Vec<RobustRow>,
    pub correlation: Option<f64>,
    pub mae: f64,
    pub skipped: usize,
}

/// Default grid: unbiased pairs over accuracies {0.6, …, 0.9} (H at least as
/// accurate as M) and target error correlations {0, 0.2, 0.4}.
pub fn robustness_grid(family: Family, trials_per_cell: usize, replications: usize, seed: u64) -> Result<SweepSpec> {
    let accs = [0.6, 0.7, 0.8, 0.9];
    let mut cells = Vec::new();
    for (i, &ah) in accs.iter().enumerate() {
        for &am in &accs[..=i] {
            let h = AgentParams::canonical(2.0 * normal::inv_cdf(ah), 0.0)?;
            let m = AgentParams::canonical(2.0 * normal::inv_cdf(am), 0.0)?;
            for rho in [0.0, 0.2, 0.4] {
                cells.push(CellSpec::new(h, m, rho).with_family(family));
            }
        }
    }
    Ok(SweepSpec {
        cells,
        trials_per_cell,
        replications,
        seed,
    })
}

/// Simulates every cell under `family` and compares the confidence-weighted
/// accuracy with the closed-form optimum evaluated at the simulated
/// accuracies and error correlation. Sensitivities are the Gaussian-channel
/// values each family is moment-matched to.
pub fn robustness_sweep(family: Family, spec: &SweepSpec) -> Result<RobustnessReport> {
    if family == Family::EmpiricalResample {
        return Err(Error::Precondition(
            "robustness sweeps need a generative family (gaussian, lognormal or beta)".into(),
        ));
    }
    let mut spec = spec.clone();
    for c in &mut spec.cells {
        c.family = family;
    }
    let results = run_sweep(&spec)?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for r in &results {
        let Some(s) = &r.stats else {
            skipped += 1;
            continue;
        };
        let (d_h, d_m) = (r.spec.d_h(), r.spec.d_m());
        let rho = s.rho_hm.clamp(-0.999, 0.999);
        let pred = BoundsReport::compute(BoundsInput {
            a_h: s.accuracy_h,
            a_m: s.accuracy_m,
            d_h,
            d_m,
            rho_hm: rho,
            n: s.n,
        })?;
        let sim = s
            .rule(RuleKind::ConfidenceWeighted)
            .map(|x| x.accuracy)
            .unwrap_or(f64::NAN);
        rows.push(RobustRow {
            cell: r.cell,
            replication: r.replication,
            d_h,
            d_m,
            rho_hm: s.rho_hm,
            predicted: pred.a_team_pred,
            simulated: sim,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptySample);
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.predicted, r.simulated)).collect();
    let mae = pairs.iter().map(|(p, s)| (p - s).abs()).sum::<f64>() / pairs.len() as f64;
    Ok(RobustnessReport {
        family,
        correlation: pearson(&pairs),
        mae,
        rows,
        skipped,
    })
}
