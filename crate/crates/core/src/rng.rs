//! Portable seeded random streams.
//!
//! Every stream is ChaCha20 keyed by a SplitMix64 hash of
//! `(seed, domain, index)`, so row `i` of a dataset draws the same numbers no
//! matter how rows are scheduled across threads.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream domains. The constants are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Covariates = 0x636f_7661,
    Choices = 0x6368_6f69,
    Run = 0x7275_6e73,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ domain as u64) ^ index)
}

/// Seed of repeated run `run` under `master`.
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, Domain::Run, run as u64)
}

pub struct Stream(ChaCha20Rng);

impl Stream {
    pub fn new(seed: u64, domain: Domain, index: u64) -> Self {
        Stream(ChaCha20Rng::seed_from_u64(derive_seed(seed, domain, index)))
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
