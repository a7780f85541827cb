//! Seeded random number generation.
//!
//! All randomness in a run flows from one 64-bit seed. Components derive
//! child generators with [`Rng::derive`] using fixed string labels, so the
//! stream a component sees is independent of what other components consume.
//! The backing generator is ChaCha8, whose output stream is identical
//! across platforms for a given seed; every distribution on top of it is
//! implemented here with plain arithmetic.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Euler–Mascheroni constant: the mean of the standard Gumbel distribution.
pub const GUMBEL_MEAN: f64 = 0.577_215_664_901_532_9;

/// Deterministic generator with label-based derivation.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator whose stream depends only on `(seed, label)`.
    pub fn derive(&self, label: &str) -> Rng {
        Rng::new(splitmix64(self.seed ^ fnv1a64(label.as_bytes())))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.uniform01() * (hi - lo)
    }

    /// Standard Gumbel(0, 1) draw; the underlying uniform is clamped away
    /// from 0 and 1 so the double logarithm stays finite.
    pub fn gumbel(&mut self) -> f64 {
        gumbel_from_uniform(self.uniform01())
    }

    pub fn gumbel_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gumbel()).collect()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn range(&mut self, n: usize) -> usize {
        assert!(n > 0, "range over empty interval");
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.range(i + 1);
            items.swap(i, j);
        }
    }
}

/// `g = -ln(-ln(u))` with `u` clamped to `[1e-12, 1 - 1e-12]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(1e-12, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
