//! Gain stratified by the sensitivity gap Δd.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_TERTILE_PAIRS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapGain {
    pub delta_d: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TertileReport {
    /// Δd range covered by each tertile.
    pub ranges: [(f64, f64); 3],
    pub means: [f64; 3],
    pub counts: [usize; 3],
    /// Least-squares fit `gain ≈ intercept + slope·√Δd`.
    pub intercept: f64,
    pub slope: f64,
    pub strictly_increasing: bool,
    /// Second step no larger than the first.
    pub concave: bool,
}

pub fn tertile_gain_analysis(points: &[GapGain]) -> Result<TertileReport> {
    if points.len() < MIN_TERTILE_PAIRS {
        return Err(Error::Precondition(format!(
            "tertile analysis needs at least {MIN_TERTILE_PAIRS} pairs, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.delta_d >= 0.0) || !p.gain.is_finite()) {
        return Err(Error::invalid("points", "Δd must be >= 0 and gains finite"));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.delta_d.total_cmp(&b.delta_d));
    let lo = sorted[0].delta_d;
    let hi = sorted[sorted.len() - 1].delta_d;
    if hi - lo <= 0.0 {
        return Err(Error::DegenerateStratification(format!("every pair has Δd = {lo}")));
    }
    let n = sorted.len();
    let bounds = [0, n / 3, 2 * n / 3, n];
    let mut ranges = [(0.0, 0.0); 3];
    let mut means = [0.0; 3];
    let mut counts = [0; 3];
    for t in 0..3 {
        let part = &sorted[bounds[t]..bounds[t + 1]];
        if part.first().map(|p| p.delta_d) == part.last().map(|p| p.delta_d)
            && t > 0
            && sorted[bounds[t] - 1].delta_d == part[0].delta_d
        {
            return Err(Error::DegenerateStratification(format!(
                "tertile {} shares all its Δd values with its neighbour",
                t + 1
            )));
        }
        ranges[t] = (part[0].delta_d, part[part.len() - 1].delta_d);
        means[t] = part.iter().map(|p| p.gain).sum::<f64>() / part.len() as f64;
        counts[t] = part.len();
    }
    let xs: Vec<f64> = sorted.iter().map(|p| p.delta_d.sqrt()).collect();
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = sorted.iter().map(|p| p.gain).sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&sorted).map(|(x, p)| (x - mx) * (p.gain - my)).sum();
    let slope = sxy / sxx;
    Ok(TertileReport {
        ranges,
        means,
        counts,
        intercept: my - slope * mx,
        slope,
        strictly_increasing: means[0] < means[1] && means[1] < means[2],
        concave: means[1] - means[0] >= means[2] - means[1],
    })
}
