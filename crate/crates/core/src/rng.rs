//! Seeded random streams.
//!
//! All randomness flows from a 64-bit seed into a [`ChaCha8Rng`]. Child
//! streams for scenarios and trials are derived by hashing the parent seed
//! with an index, so results never depend on scheduling order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Source of the uniform draws used for tie-breaks and randomized moves.
pub trait Entropy {
    /// A uniform draw on `[0, 1)`.
    fn uniform(&mut self) -> f64;
}

impl<R: RngCore> Entropy for R {
    fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }
}

/// Replays previously logged draws in order.
#[derive(Debug, Clone)]
pub struct ReplayDraws<'a> {
    draws: &'a [f64],
    used: usize,
}

impl<'a> ReplayDraws<'a> {
    pub fn new(draws: &'a [f64]) -> Self {
        ReplayDraws { draws, used: 0 }
    }

    pub fn exhausted(&self) -> bool {
        self.used == self.draws.len()
    }
}

impl Entropy for ReplayDraws<'_> {
    fn uniform(&mut self) -> f64 {
        let u = self.draws.get(self.used).copied().unwrap_or(0.0);
        self.used += 1;
        u
    }
}

/// Wraps an entropy source and records every draw it hands out.
pub struct Recorder<'a, E: ?Sized> {
    inner: &'a mut E,
    pub log: Vec<f64>,
}

impl<'a, E: Entropy + ?Sized> Recorder<'a, E> {
    pub fn new(inner: &'a mut E) -> Self {
        Recorder { inner, log: Vec::new() }
    }
}

impl<E: Entropy + ?Sized> Entropy for Recorder<'_, E> {
    fn uniform(&mut self) -> f64 {
        let u = self.inner.uniform();
        self.log.push(u);
        u
    }
}

/// Index of a uniformly chosen element among `len` options.
pub fn pick_uniform(entropy: &mut (impl Entropy + ?Sized), len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    ((entropy.uniform() * len as f64) as usize).min(len - 1)
}

/// Index chosen with probability proportional to `weights`. Falls back to a
/// uniform choice when the weights sum to zero.
pub fn pick_weighted(entropy: &mut (impl Entropy + ?Sized), weights: &[f64]) -> usize {
    debug_assert!(!weights.is_empty());
    if weights.len() == 1 {
        return 0;
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return pick_uniform(entropy, weights.len());
    }
    let target = entropy.uniform() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        let c = derive_seed(8, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 0));
    }

    #[test]
    fn single_options_consume_nothing() {
        let mut log = ReplayDraws::new(&[]);
        assert_eq!(pick_uniform(&mut log, 1), 0);
        assert_eq!(pick_weighted(&mut log, &[0.3]), 0);
        assert!(log.exhausted());
    }

    #[test]
    fn weighted_pick_follows_cumulative_mass() {
        let w = [0.2, 0.6, 0.2];
        assert_eq!(pick_weighted(&mut ReplayDraws::new(&[0.1]), &w), 0);
        assert_eq!(pick_weighted(&mut ReplayDraws::new(&[0.5]), &w), 1);
        assert_eq!(pick_weighted(&mut ReplayDraws::new(&[0.95]), &w), 2);
    }

    #[test]
    fn recorder_logs_draws() {
        let mut rng = stream(3);
        let mut rec = Recorder::new(&mut rng);
        let i = pick_uniform(&mut rec, 4);
        assert_eq!(rec.log.len(), 1);
        let mut replay = ReplayDraws::new(&rec.log);
        assert_eq!(pick_uniform(&mut replay, 4), i);
    }
}
