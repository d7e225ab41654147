//! Empirical gain-zero crossing of gain(ρ).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cell::{run_sweep, CellResult, SweepSpec};
use crate::aggregation::RuleKind;
use crate::error::{Error, Result};
use crate::rng::chunk_rng;

const BOOT_DOMAIN: u64 = 0x424f_4f54;

/// Minimum number of distinct correlation values in a threshold sweep.
pub const MIN_RHO_POINTS: usize = 8;

/// Which gain the crossing is located on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMeasure {
    /// Best of the combining rules.
    #[default]
    Best,
    Rule(RuleKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOptions {
    pub bootstrap: usize,
    pub seed: u64,
    pub measure: GainMeasure,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            bootstrap: 1000,
            seed: 0,
            measure: GainMeasure::Best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub rho: f64,
    pub mean_gain: f64,
    pub fitted: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub threshold: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Bootstrap resamples with no sign change.
    pub bootstrap_failures: usize,
    pub points: Vec<ThresholdPoint>,
}

/// Weighted pool-adjacent-violators fit, constrained non-increasing.
pub fn isotonic_decreasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    // Blocks of (mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let wt = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / wt, wt, l1 + l2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect()
}

/// First downward crossing of zero, linearly interpolated. `None` if the
/// curve does not start positive and end non-positive.
pub fn zero_crossing(x: &[f64], f: &[f64]) -> Option<f64> {
    if f.is_empty() || f[0] <= 0.0 || *f.last()? > 0.0 {
        return None;
    }
    let j = f.iter().position(|&v| v <= 0.0)?;
    let (x0, x1, f0, f1) = (x[j - 1], x[j], f[j - 1], f[j]);
    Some(x0 + f0 * (x1 - x0) / (f0 - f1))
}

fn crossing(x: &[f64], groups: &[Vec<f64>]) -> (Option<f64>, Vec<f64>, Vec<f64>) {
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let w: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let fitted = isotonic_decreasing(&means, &w);
    (zero_crossing(x, &fitted), means, fitted)
}

/// Crossing from per-point replicate gains, with a percentile bootstrap
/// over replications within each point.
pub fn threshold_from_points(points: &[(f64, Vec<f64>)], opts: &ThresholdOptions) -> Result<ThresholdEstimate> {
    let mut pts: Vec<&(f64, Vec<f64>)> = points.iter().filter(|p| !p.1.is_empty()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() < MIN_RHO_POINTS {
        return Err(Error::Precondition(format!(
            "threshold estimation needs at least {MIN_RHO_POINTS} correlation points, got {}",
            pts.len()
        )));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let groups: Vec<Vec<f64>> = pts.iter().map(|p| p.1.clone()).collect();
    let (est, means, fitted) = crossing(&x, &groups);
    let threshold = est.ok_or(Error::ThresholdNotBracketed {
        lo: x[0],
        hi: x[x.len() - 1],
    })?;

    let mut rng = chunk_rng(opts.seed, BOOT_DOMAIN, 0);
    let mut boots = Vec::with_capacity(opts.bootstrap);
    let mut failures = 0;
    let mut resampled: Vec<Vec<f64>> = groups.iter().map(|g| vec![0.0; g.len()]).collect();
    for _ in 0..opts.bootstrap {
        for (dst, src) in resampled.iter_mut().zip(&groups) {
            for v in dst.iter_mut() {
                *v = src[rng.random_range(0..src.len())];
            }
        }
        match crossing(&x, &resampled).0 {
            Some(t) => boots.push(t),
            None => failures += 1,
        }
    }
    let (ci_lo, ci_hi) = if boots.is_empty() {
        (threshold, threshold)
    } else {
        boots.sort_by(f64::total_cmp);
        (quantile(&boots, 0.025), quantile(&boots, 0.975))
    };
    Ok(ThresholdEstimate {
        threshold,
        ci_lo,
        ci_hi,
        bootstrap_failures: failures,
        points: x
            .iter()
            .zip(&means)
            .zip(&fitted)
            .zip(&groups)
            .map(|(((&rho, &mean_gain), &fitted), g)| ThresholdPoint {
                rho,
                mean_gain,
                fitted,
                replications: g.len(),
            })
            .collect(),
    })
}

/// Linear-interpolated quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

fn gain_of(r: &CellResult, measure: GainMeasure) -> Option<f64> {
    let s = r.stats.as_ref()?;
    match measure {
        GainMeasure::Best => Some(s.gain),
        GainMeasure::Rule(k) => s.rule(k).map(|x| x.gain),
    }
}

/// Crossing from sweep results, keyed by each cell's target correlation.
pub fn threshold_from_results(results: &[CellResult], opts: &ThresholdOptions) -> Result<ThresholdEstimate> {
    let mut points: Vec<(f64, Vec<f64>)> = Vec::new();
    for r in results {
        let Some(g) = gain_of(r, opts.measure) else { continue };
        match points.iter_mut().find(|p| p.0 == r.spec.rho_hm) {
            Some(p) => p.1.push(g),
            None => points.push((r.spec.rho_hm, vec![g])),
        }
    }
    threshold_from_points(&points, opts)
}

/// Runs a sweep over correlation only and locates the gain-zero crossing.
pub fn estimate_threshold(spec: &SweepSpec, opts: &ThresholdOptions) -> Result<ThresholdEstimate> {
    spec.validate()?;
    let first = &spec.cells[0];
    if spec.cells.iter().any(|c| {
        c.agent_h != first.agent_h
            || c.agent_m != first.agent_m
            || c.family != first.family
            || c.class_prior != first.class_prior
    }) {
        return Err(Error::Precondition(
            "threshold sweep must vary only the error correlation".into(),
        ));
    }
    let results = run_sweep(spec)?;
    threshold_from_results(&results, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pava_pools_violators() {
        let f = isotonic_decreasing(&[3.0, 1.0, 2.0, 0.0], &[1.0; 4]);
        assert_eq!(f, vec![3.0, 1.5, 1.5, 0.0]);
        let f = isotonic_decreasing(&[1.0, 2.0], &[3.0, 1.0]);
        assert_eq!(f, vec![1.25, 1.25]);
    }

    #[test]
    fn crossing_interpolates() {
        let x = [0.0, 0.5, 1.0];
        assert_abs_diff_eq!(zero_crossing(&x, &[1.0, 0.5, -0.5]).unwrap(), 0.75);
        assert!(zero_crossing(&x, &[1.0, 0.5, 0.1]).is_none());
        assert!(zero_crossing(&x, &[-1.0, -2.0, -3.0]).is_none());
    }

    #[test]
    fn linear_gain_curve_recovers_root() {
        let points: Vec<(f64, Vec<f64>)> = (0..10)
            .map(|i| {
                let rho = i as f64 / 10.0;
                (rho, vec![0.6 - rho, 0.6 - rho + 0.01, 0.6 - rho - 0.01])
            })
            .collect();
        let est = threshold_from_points(&points, &ThresholdOptions::default()).unwrap();
        assert_abs_diff_eq!(est.threshold, 0.6, epsilon = 1e-12);
        assert!(est.ci_lo <= 0.6 && est.ci_hi >= 0.6);
    }

    #[test]
    fn all_positive_is_not_bracketed() {
        let points: Vec<(f64, Vec<f64>)> = (0..8).map(|i| (i as f64 / 10.0, vec![0.1])).collect();
        assert!(matches!(
            threshold_from_points(&points, &ThresholdOptions::default()),
            Err(Error::ThresholdNotBracketed { .. })
        ));
        assert!(threshold_from_points(&points[..5], &ThresholdOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn pava_is_monotone_and_mean_preserving(y in prop::collection::vec(-1.0f64..1.0, 1..30)) {
            let w = vec![1.0; y.len()];
            let f = isotonic_decreasing(&y, &w);
            for p in f.windows(2) {
                prop_assert!(p[0] >= p[1] - 1e-12);
            }
            let s0: f64 = y.iter().sum();
            let s1: f64 = f.iter().sum();
            prop_assert!((s0 - s1).abs() < 1e-9);
        }
    }
}
