//! Role-labelled seed derivation.
//!
//! Every randomized step in the pipeline draws from a generator seeded with
//! `SHA-256(master_seed_le || role || index_le)`. Sample `i` of a corpus is
//! therefore a pure function of `(seed, role, i)` and generation order does
//! not matter.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub fn subseed(seed: u64, role: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((role.len() as u32).to_le_bytes());
    h.update(role.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn rng_for(seed: u64, role: &str, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(subseed(seed, role, index))
}

/// Derives a child 64-bit seed, used to hand a stage its own master seed.
pub fn derive_seed(seed: u64, role: &str) -> u64 {
    let s = subseed(seed, role, 0);
    u64::from_le_bytes(s[..8].try_into().unwrap())
}
