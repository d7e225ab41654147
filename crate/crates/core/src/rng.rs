//! Deterministic random streams.
//!
//! Work is cut into fixed-size chunks of trial indices. Every chunk owns a
//! ChaCha8 stream keyed by `(seed, domain)` and selected by the chunk index,
//! so the values drawn for trial `i` depend only on `(seed, domain, i)` and
//! never on how many threads executed the chunks.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Trials per independent stream.
pub const CHUNK: usize = 4096;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed from a parent seed and a list of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// RNG for chunk `chunk` of stream `domain`.
pub fn chunk_rng(seed: u64, domain: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[domain]));
    rng.set_stream(chunk);
    rng
}

/// Runs `f` over every chunk of `0..n` (possibly in parallel) and returns the
/// per-chunk results in chunk order.
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, Range<usize>) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            f(c as u64, start..end)
        })
        .collect()
}

/// Seeded fair coin indexed by trial, used to break ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TieBreak {
    seed: u64,
}

impl TieBreak {
    pub fn new(seed: u64) -> Self {
        Self {
            seed: splitmix64(seed ^ 0x7469_6562_7265_616b),
        }
    }

    /// `true` means "pick the first agent".
    pub fn coin(&self, index: u64) -> bool {
        splitmix64(self.seed ^ splitmix64(index)) & 1 == 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn chunk_streams_are_reproducible_and_distinct() {
        let mut r1 = chunk_rng(7, 1, 3);
        let mut r2 = chunk_rng(7, 1, 3);
        let mut r3 = chunk_rng(7, 1, 4);
        let x1: u64 = r1.random();
        assert_eq!(x1, r2.random::<u64>());
        assert_ne!(x1, r3.random::<u64>());
    }

    #[test]
    fn map_chunks_covers_range_in_order() {
        let parts = map_chunks(3 * CHUNK + 5, |c, r| (c, r.start, r.end));
        assert_eq!(parts.len(), 4);
        assert_eq!(parts[3], (3, 3 * CHUNK, 3 * CHUNK + 5));
        for w in parts.windows(2) {
            assert_eq!(w[0].2, w[1].1);
        }
    }

    #[test]
    fn tie_coin_is_roughly_fair() {
        let t = TieBreak::new(11);
        let heads = (0..100_000u64).filter(|&i| t.coin(i)).count();
        assert!((heads as f64 / 1e5 - 0.5).abs() < 0.01);
    }
}
