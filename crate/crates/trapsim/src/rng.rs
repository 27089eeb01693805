//! Deterministic counter-based random number generation.
//!
//! A single run seed is forked into independent streams (environment,
//! policy sampling, replay buffer, ...) so that the order in which
//! components draw numbers never perturbs another component's stream.
//! Everything is plain integer arithmetic: the same seed produces the
//! same bytes on every platform.

/// splitmix64-based generator.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derives an independent stream from this generator's seed and a tag.
    ///
    /// Forking is a pure function of (current state, tag): forks taken in a
    /// different order, or interleaved with draws on other forks, yield the
    /// same streams.
    pub fn fork(&self, tag: u64) -> Rng {
        Rng {
            state: mix(self.state ^ mix(tag.wrapping_mul(GOLDEN).wrapping_add(GOLDEN))),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is negligible for the small n used here.
        (self.next_u64() % n as u64) as usize
    }

    /// Samples an index from an unnormalized non-negative weight vector.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.next_f64() * total;
        for (i, w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }
}
