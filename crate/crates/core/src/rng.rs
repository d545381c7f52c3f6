//! Named random sub-streams derived from one 64-bit seed.
//!
//! Every consumer of randomness asks for a stream by purpose string and
//! index, so results do not depend on scheduling or worker count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type BedRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, purpose: &str, index: u64) -> BedRng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((purpose.len() as u64).to_le_bytes());
        h.update(purpose.as_bytes());
        h.update(index.to_le_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }

    /// A child stream family, e.g. one per replicate.
    pub fn child(&self, purpose: &str, index: u64) -> SeedStream {
        SeedStream::new(self.rng(purpose, index).next_u64())
    }
}

/// One independent generator per outer index, drawn from `rng` up front.
pub fn split<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> Vec<BedRng> {
    (0..n).map(|_| ChaCha8Rng::seed_from_u64(rng.next_u64())).collect()
}
