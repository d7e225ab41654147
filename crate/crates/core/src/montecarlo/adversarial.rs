//! Worst-case gains under two-point (coarsened) confidence reports.
//!
//! Each agent only reports whether its evidence lies beyond a cut, so its
//! confidence takes two values. For every pair the cut grid is searched for
//! the configuration that leaves the least room for complementarity; the best
//! selection rule for the coarsened reports is learned on one half of the
//! trials and scored on the other.

use serde::{Deserialize, Serialize};

use crate::bounds::minimax_interval;
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::sdt::{AgentParams, PairConfig, TrialSampler};

const ADV_DOMAIN: u64 = 0x414456;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSpec {
    /// `(d_H, d_M)` of unbiased agents.
    pub pairs: Vec<(f64, f64)>,
    pub latent_corr: f64,
    /// Cut points on `|θ − τ|/σ` separating the two confidence levels.
    pub cuts: Vec<f64>,
    pub trials_per_cell: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialCell {
    pub cut_h: f64,
    pub cut_m: f64,
    pub gain: f64,
    pub gain_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPair {
    pub d_h: f64,
    pub d_m: f64,
    pub delta_d: f64,
    pub e_star: f64,
    pub worst: AdversarialCell,
    pub minimax_lo: f64,
    pub minimax_hi: f64,
    pub ordered: bool,
    /// Worst gain inside `[lo − 2SE, hi + 2SE]`; `None` where the bounds are
    /// not ordered.
    pub inside: Option<bool>,
    pub cells: Vec<AdversarialCell>,
}

// Packed trial: bit 0 y, 1 ŷ_H, 2 ŷ_M, 3 high-confidence H, 4 high-confidence M.
fn pack(y: u8, yh: u8, ym: u8, bh: bool, bm: bool) -> u8 {
    y | yh << 1 | ym << 2 | u8::from(bh) << 3 | u8::from(bm) << 4
}

fn simulate_coarse(cfg: &PairConfig, cut_h: f64, cut_m: f64, n: usize, seed: u64) -> Vec<u8> {
    let sampler = TrialSampler::new(*cfg);
    let (h, m) = (cfg.agent_h, cfg.agent_m);
    rng::map_chunks(n, |chunk, range| {
        let mut r = rng::chunk_rng(seed, ADV_DOMAIN, chunk);
        range
            .map(|_| {
                let l = sampler.draw_latent(&mut r);
                let th = h.mean(l.y) + h.sigma * l.z_h;
                let tm = m.mean(l.y) + m.sigma * l.z_m;
                pack(
                    l.y,
                    u8::from(th > h.tau),
                    u8::from(tm > m.tau),
                    (th - h.tau).abs() / h.sigma > cut_h,
                    (tm - m.tau).abs() / m.sigma > cut_m,
                )
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn correct(t: u8, agent_bit: u8) -> bool {
    (t >> agent_bit) & 1 == t & 1
}

/// Gain of the lookup rule learned on `train`, scored on `test`.
fn lookup_gain(train: &[u8], test: &[u8]) -> (f64, f64) {
    // State on disagreements: (high_H, high_M, ŷ_H).
    let state = |t: u8| usize::from((t >> 3) & 1) | usize::from((t >> 4) & 1) << 1 | usize::from((t >> 1) & 1) << 2;
    let disagree = |t: u8| ((t >> 1) ^ (t >> 2)) & 1 == 1;
    let mut h_wins = [0i64; 8];
    let (mut h_tr, mut m_tr) = (0usize, 0usize);
    for &t in train {
        h_tr += usize::from(correct(t, 1));
        m_tr += usize::from(correct(t, 2));
        if disagree(t) {
            h_wins[state(t)] += if correct(t, 1) { 1 } else { -1 };
        }
    }
    let prefer_h = h_tr >= m_tr;
    let pick_h: Vec<bool> = h_wins
        .iter()
        .map(|&w| if w == 0 { prefer_h } else { w > 0 })
        .collect();
    let (mut hc, mut mc, mut team, mut vs_h, mut vs_m) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for &t in test {
        let (h, m) = (correct(t, 1), correct(t, 2));
        let ok = if disagree(t) {
            if pick_h[state(t)] {
                h
            } else {
                m
            }
        } else {
            h
        };
        hc += usize::from(h);
        mc += usize::from(m);
        team += usize::from(ok);
        vs_h += usize::from(ok != h);
        vs_m += usize::from(ok != m);
    }
    let n = test.len() as f64;
    let a_star = hc.max(mc) as f64 / n;
    let gain = team as f64 / n - a_star;
    let sq = if hc >= mc { vs_h } else { vs_m } as f64 / n;
    (gain, ((sq - gain * gain).max(0.0) / n).sqrt())
}

pub fn adversarial_sweep(spec: &AdversarialSpec) -> Result<Vec<AdversarialPair>> {
    if spec.pairs.is_empty() || spec.cuts.is_empty() {
        return Err(Error::invalid("grid", "adversarial grid is empty"));
    }
    if spec.trials_per_cell < 2 {
        return Err(Error::invalid("trials_per_cell", "need at least two trials"));
    }
    if let Some(c) = spec.cuts.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::invalid("cuts", format!("{c} must be >= 0")));
    }
    let mut out = Vec::with_capacity(spec.pairs.len());
    for (pi, &(d_h, d_m)) in spec.pairs.iter().enumerate() {
        let cfg = PairConfig::new(AgentParams::canonical(d_h, 0.0)?, AgentParams::canonical(d_m, 0.0)?, spec.latent_corr)?;
        let mut cells = Vec::with_capacity(spec.cuts.len().pow(2));
        for (hi, &cut_h) in spec.cuts.iter().enumerate() {
            for (mi, &cut_m) in spec.cuts.iter().enumerate() {
                let seed = derive_seed(spec.seed, &[pi as u64, hi as u64, mi as u64]);
                let trials = simulate_coarse(&cfg, cut_h, cut_m, spec.trials_per_cell, seed);
                let (train, test) = trials.split_at(trials.len() / 2);
                let (gain, gain_se) = lookup_gain(train, test);
                cells.push(AdversarialCell {
                    cut_h,
                    cut_m,
                    gain,
                    gain_se,
                });
            }
        }
        let worst = *cells
            .iter()
            .min_by(|a, b| a.gain.total_cmp(&b.gain))
            .expect("non-empty grid");
        let e_star = 1.0 - cfg.accuracy_h().max(cfg.accuracy_m());
        let delta_d = (d_h - d_m).abs();
        let mm = minimax_interval(delta_d, e_star)?;
        let inside = mm
            .ordered
            .then_some(worst.gain >= mm.lo - 2.0 * worst.gain_se && worst.gain <= mm.hi + 2.0 * worst.gain_se);
        out.push(AdversarialPair {
            d_h,
            d_m,
            delta_d,
            e_star,
            worst,
            minimax_lo: mm.lo,
            minimax_hi: mm.hi,
            ordered: mm.ordered,
            inside,
            cells,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uninformative_cuts_reduce_to_best_agent() {
        // With cuts beyond any latent value both agents always report "low";
        // the learned rule can only follow one agent per predicted label.
        let spec = AdversarialSpec {
            pairs: vec![(1.5, 0.5)],
            latent_corr: 0.0,
            cuts: vec![1e9],
            trials_per_cell: 100_000,
            seed: 4,
        };
        let p = &adversarial_sweep(&spec).unwrap()[0];
        assert!(p.worst.gain.abs() < 4.0 * p.worst.gain_se + 1e-3, "{:?}", p.worst);
        assert!(p.delta_d == 1.0 && p.ordered);
    }

    #[test]
    fn informative_cuts_help() {
        let spec = AdversarialSpec {
            pairs: vec![(1.0, 1.0)],
            latent_corr: 0.0,
            cuts: vec![0.5],
            trials_per_cell: 100_000,
            seed: 5,
        };
        let p = &adversarial_sweep(&spec).unwrap()[0];
        assert!(p.worst.gain > 3.0 * p.worst.gain_se, "{:?}", p.worst);
    }

    #[test]
    fn empty_grid_rejected() {
        let spec = AdversarialSpec {
            pairs: vec![],
            latent_corr: 0.0,
            cuts: vec![1.0],
            trials_per_cell: 10,
            seed: 0,
        };
        assert!(adversarial_sweep(&spec).is_err());
    }
}
