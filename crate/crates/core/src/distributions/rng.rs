//! Seeded pseudo-random source.
//!
//! The generator is PCG XSL RR 128/64 (`rand_pcg::Pcg64`), seeded through
//! `SeedableRng::seed_from_u64`. Every distribution draws raw 64-bit words only
//! through [`Rng::next_u64`], so a trace is reproducible from its seed and the
//! count of words drawn.

use rand_core::{Rng as _, SeedableRng};
use rand_pcg::Pcg64;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `index` from `root`: `mix64(root ^ mix64((index + 1) * GOLDEN_GAMMA))`.
pub fn split_seed(root: u64, index: u64) -> u64 {
    mix64(root ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Pcg64,
    words: u64,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Self {
            inner: Pcg64::seed_from_u64(seed),
            words: 0,
        }
    }

    /// Independent generator for stream `index` of `root`.
    pub fn split(root: u64, index: u64) -> Self {
        Self::seed_from_u64(split_seed(root, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.words += 1;
        self.inner.next_u64()
    }

    /// Number of raw words drawn so far.
    pub fn words_drawn(&self) -> u64 {
        self.words
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution. One word.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`. One word.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion. One word.
    pub fn standard_normal(&mut self) -> f64 {
        super::special::norm_inv_cdf(self.uniform_open())
    }

    /// Uniform index in `0..n` (`n > 0`). One word.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn fork(&mut self) -> Rng {
        Rng::seed_from_u64(self.next_u64())
    }
}
