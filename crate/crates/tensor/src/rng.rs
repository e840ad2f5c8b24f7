//! Seedable root generator that spawns named, independent sub-streams.
//!
//! Every source of randomness in the pipeline (dropout, mask sampling,
//! diffusion noise, ensemble members, data generation) draws from its own
//! named stream, so evaluation order and parallelism cannot change results
//! for a fixed stream assignment.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A deterministic generator for one named stream.
pub type Stream = ChaCha8Rng;

/// Root generator. Cheap to clone; streams are derived, never shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngPool {
    seed: u64,
}

impl RngPool {
    pub fn new(seed: u64) -> Self {
        RngPool { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive the stream with the given name. The same (seed, name) pair
    /// always yields the same stream; distinct names give statistically
    /// independent streams.
    pub fn stream(&self, name: &str) -> Stream {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update([0x1f]); // domain separator between seed and name
        hasher.update(name.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }

    /// Convenience for hierarchical names ("member3/token17").
    pub fn substream(&self, prefix: &str, suffix: impl std::fmt::Display) -> Stream {
        self.stream(&format!("{prefix}/{suffix}"))
    }
}
