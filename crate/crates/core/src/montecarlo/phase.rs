//! Long-format phase diagram: gain over (accuracy, error correlation).

use serde::{Deserialize, Serialize};

use super::cell::CellResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub a: f64,
    pub rho: f64,
    pub gain: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// One row per simulated cell, averaging replications. The gain CI combines
/// the replications' standard errors (or their spread when that is larger).
pub fn phase_rows(results: &[CellResult]) -> Vec<PhaseRow> {
    let mut cells: Vec<usize> = results.iter().map(|r| r.cell).collect();
    cells.sort_unstable();
    cells.dedup();
    cells
        .into_iter()
        .filter_map(|c| {
            let reps: Vec<&CellResult> = results.iter().filter(|r| r.cell == c).collect();
            let stats: Vec<_> = reps.iter().filter_map(|r| r.stats.as_ref()).collect();
            if stats.is_empty() {
                return None;
            }
            let k = stats.len() as f64;
            let gain = stats.iter().map(|s| s.gain).sum::<f64>() / k;
            let se_model = (stats.iter().map(|s| s.gain_se * s.gain_se).sum::<f64>()).sqrt() / k;
            let se_spread = if stats.len() > 1 {
                (stats.iter().map(|s| (s.gain - gain).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
            } else {
                0.0
            };
            let half = 1.96 * se_model.max(se_spread);
            let a = reps[0]
                .analytic
                .map(|x| x.accuracy_h.max(x.accuracy_m))
                .unwrap_or(stats[0].a_star);
            Some(PhaseRow {
                a,
                rho: reps[0].spec.rho_hm,
                gain,
                ci_lo: gain - half,
                ci_hi: gain + half,
            })
        })
        .collect()
}
