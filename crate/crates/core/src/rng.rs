//! Deterministic random streams.
//!
//! Every random draw in the crate goes through [`SeededRng`], a ChaCha20
//! generator (`rand_chacha::ChaCha20Rng::seed_from_u64`) with explicit
//! conversions so that the sequence of values is fully specified by the
//! seed and does not depend on `rand`'s distribution implementations:
//!
//! * unit draws use the top 53 bits of one `u64`: `(r >> 11) * 2^-53`,
//! * symmetric draws map a unit draw `v` to `2v - 1`,
//! * bounded integers use rejection sampling below the largest multiple
//!   of the bound, then reduce modulo the bound.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Name recorded in model and spec files.
pub const PRNG_FAMILY: &str = "chacha20-u64-seed";

pub struct SeededRng {
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-1, 1)`.
    pub fn symmetric(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }

    /// Uniform integer in `[0, bound)`. `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let r = self.next_u64();
            if r < zone {
                return r % bound;
            }
        }
    }

    /// Standard normal via Box-Muller (one value per two unit draws).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle, last index first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Derives a stage seed from the global seed and a fixed stream label.
///
/// The top bit is cleared so derived seeds fit the signed 64-bit integers
/// of TOML config files.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(global.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap()) >> 1
}
