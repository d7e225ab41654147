//! Multi-class extension: thresholds for K equiprobable classes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::threshold::{threshold_from_points, ThresholdOptions, ThresholdPoint};
use crate::bounds::rho_star_k;
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, TieBreak};

const KCLASS_DOMAIN: u64 = 0x4b43_4c53;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KClassSpec {
    pub k_values: Vec<usize>,
    pub d_h: f64,
    pub d_m: f64,
    /// Correlation of the two agents' noise on the correct-class coordinate.
    pub latent_corrs: Vec<f64>,
    pub trials_per_cell: usize,
    pub replications: usize,
    pub seed: u64,
    /// Binary threshold used for the `ρ*/√(K−1)` prediction; when absent the
    /// simulated K = 2 threshold is used.
    #[serde(default)]
    pub rho_star_binary: Option<f64>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn default_bootstrap() -> usize {
    1000
}

impl KClassSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.latent_corrs.is_empty() {
            return Err(Error::invalid("grid", "K-class grid is empty"));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k < 2) {
            return Err(Error::InvalidClassCount { k });
        }
        if self.trials_per_cell == 0 || self.replications == 0 {
            return Err(Error::invalid("trials_per_cell", "trials and replications must be > 0"));
        }
        if !(self.d_h >= 0.0 && self.d_m >= 0.0) || (self.d_h == 0.0 && self.d_m == 0.0) {
            return Err(Error::invalid("d", "sensitivities must be >= 0 and not both 0"));
        }
        if let Some(&r) = self.latent_corrs.iter().find(|r| !(r.abs() <= 1.0)) {
            return Err(Error::invalid("latent_corr", format!("{r} outside [-1, 1]")));
        }
        Ok(())
    }
}

/// Summary of one (K, latent correlation, replication) simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KCell {
    pub k: usize,
    pub latent_corr: f64,
    pub replication: usize,
    pub accuracy_h: f64,
    pub accuracy_m: f64,
    pub rho_hm: f64,
    pub cw_accuracy: f64,
    pub majority_accuracy: f64,
    /// Best of confidence weighting and majority, minus the better agent.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub predicted: Option<f64>,
    pub observed: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub error: Option<String>,
    pub points: Vec<ThresholdPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KClassReport {
    pub rho_star_binary: Option<f64>,
    pub rows: Vec<KRow>,
    /// Pearson correlation of predicted and observed thresholds over K.
    pub correlation: Option<f64>,
    pub cells: Vec<KCell>,
}

/// Label and top-class posterior of one agent. The correct coordinate has
/// mean `d`, the others 0, all with unit noise; `buf` is scratch space.
fn decide<R: Rng + ?Sized>(d: f64, y: usize, eps_y: f64, buf: &mut [f64], rng: &mut R) -> (usize, f64) {
    let mut arg = 0;
    for (j, x) in buf.iter_mut().enumerate() {
        *x = if j == y { d + eps_y } else { rng.sample(StandardNormal) };
    }
    for j in 1..buf.len() {
        if buf[j] > buf[arg] {
            arg = j;
        }
    }
    let top = buf[arg];
    let z: f64 = buf.iter().map(|&x| (d * (x - top)).exp()).sum();
    (arg, 1.0 / z)
}

#[derive(Default, Clone, Copy)]
struct KCounts {
    n: u64,
    h: u64,
    m: u64,
    both_wrong: u64,
    cw: u64,
    maj: u64,
}

pub fn simulate_kclass_cell(k: usize, d_h: f64, d_m: f64, latent_corr: f64, n: usize, seed: u64) -> Result<KCell> {
    if k < 2 {
        return Err(Error::InvalidClassCount { k });
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let cross = (1.0 - latent_corr * latent_corr).max(0.0).sqrt();
    let tie = TieBreak::new(derive_seed(seed, &[1]));
    let parts = rng::map_chunks(n, |chunk, range| {
        let mut r = rng::chunk_rng(seed, KCLASS_DOMAIN, chunk);
        let mut buf = vec![0.0; k];
        let mut c = KCounts::default();
        for i in range {
            let y = r.random_range(0..k);
            let z1: f64 = r.sample(StandardNormal);
            let z2: f64 = r.sample(StandardNormal);
            let (lh, ch) = decide(d_h, y, z1, &mut buf, &mut r);
            let (lm, cm) = decide(d_m, y, latent_corr * z1 + cross * z2, &mut buf, &mut r);
            let (hc, mc) = (lh == y, lm == y);
            c.n += 1;
            c.h += u64::from(hc);
            c.m += u64::from(mc);
            c.both_wrong += u64::from(!hc && !mc);
            if lh == lm {
                c.cw += u64::from(hc);
                c.maj += u64::from(hc);
                continue;
            }
            let coin = tie.coin(i as u64);
            // Weights proportional to d: the shared normaliser cancels.
            let (sh, sm) = (d_h * ch, d_m * cm);
            let pick_h = if sh == sm { coin } else { sh > sm };
            c.cw += u64::from(if pick_h { hc } else { mc });
            c.maj += u64::from(if coin { hc } else { mc });
        }
        c
    });
    let t = parts.iter().fold(KCounts::default(), |a, b| KCounts {
        n: a.n + b.n,
        h: a.h + b.h,
        m: a.m + b.m,
        both_wrong: a.both_wrong + b.both_wrong,
        cw: a.cw + b.cw,
        maj: a.maj + b.maj,
    });
    let nf = t.n as f64;
    let (ah, am) = (t.h as f64 / nf, t.m as f64 / nf);
    let (eh, em) = (1.0 - ah, 1.0 - am);
    let denom = (eh * ah * em * am).sqrt();
    let rho = if denom > 0.0 {
        (t.both_wrong as f64 / nf - eh * em) / denom
    } else {
        0.0
    };
    let cw = t.cw as f64 / nf;
    let maj = t.maj as f64 / nf;
    Ok(KCell {
        k,
        latent_corr,
        replication: 0,
        accuracy_h: ah,
        accuracy_m: am,
        rho_hm: rho,
        cw_accuracy: cw,
        majority_accuracy: maj,
        gain: cw.max(maj) - ah.max(am),
    })
}

/// Simulated threshold per K next to the `ρ*/√(K−1)` prediction.
pub fn kclass_sweep(spec: &KClassSpec) -> Result<KClassReport> {
    spec.validate()?;
    let mut cells = Vec::new();
    let mut estimates = Vec::new();
    for (ki, &k) in spec.k_values.iter().enumerate() {
        let mut points = Vec::with_capacity(spec.latent_corrs.len());
        for (ri, &r) in spec.latent_corrs.iter().enumerate() {
            let mut gains = Vec::with_capacity(spec.replications);
            let mut rho_sum = 0.0;
            for rep in 0..spec.replications {
                let seed = derive_seed(spec.seed, &[ki as u64, ri as u64, rep as u64]);
                let mut cell = simulate_kclass_cell(k, spec.d_h, spec.d_m, r, spec.trials_per_cell, seed)?;
                cell.replication = rep;
                rho_sum += cell.rho_hm;
                gains.push(cell.gain);
                cells.push(cell);
            }
            points.push((rho_sum / spec.replications as f64, gains));
        }
        let opts = ThresholdOptions {
            bootstrap: spec.bootstrap,
            seed: derive_seed(spec.seed, &[ki as u64, 0xb007]),
            ..Default::default()
        };
        estimates.push((k, threshold_from_points(&points, &opts), points));
    }

    let binary = spec.rho_star_binary.or_else(|| {
        estimates
            .iter()
            .find(|e| e.0 == 2)
            .and_then(|e| e.1.as_ref().ok().map(|t| t.threshold))
    });
    let rows: Vec<KRow> = estimates
        .into_iter()
        .map(|(k, est, points)| {
            let predicted = binary.and_then(|b| rho_star_k(b.clamp(0.0, 1.0), k).ok());
            match est {
                Ok(t) => KRow {
                    k,
                    predicted,
                    observed: Some(t.threshold),
                    ci_lo: Some(t.ci_lo),
                    ci_hi: Some(t.ci_hi),
                    error: None,
                    points: t.points,
                },
                Err(e) => KRow {
                    k,
                    predicted,
                    observed: None,
                    ci_lo: None,
                    ci_hi: None,
                    error: Some(e.to_string()),
                    points: points
                        .iter()
                        .map(|(rho, g)| ThresholdPoint {
                            rho: *rho,
                            mean_gain: g.iter().sum::<f64>() / g.len() as f64,
                            fitted: f64::NAN,
                            replications: g.len(),
                        })
                        .collect(),
                },
            }
        })
        .collect();
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.predicted?, r.observed?)))
        .collect();
    Ok(KClassReport {
        rho_star_binary: binary,
        correlation: pearson(&pairs),
        rows,
        cells,
    })
}

/// Pearson correlation; `None` with fewer than three points or no spread.
pub fn pearson(xy: &[(f64, f64)]) -> Option<f64> {
    if xy.len() < 3 {
        return None;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in xy {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
