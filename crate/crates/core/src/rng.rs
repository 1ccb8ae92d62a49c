//! Labeled, splittable deterministic randomness.
//!
//! Every stage derives its generator from `(seed, label, index)` through
//! SHA-256, so streams do not depend on the order in which stages run or on
//! how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

fn material(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"spoofbench-rng-v1");
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Generator for a named stage.
pub fn stream(seed: u64, label: &str) -> StageRng {
    substream(seed, label, 0)
}

/// Generator for item `index` of a named stage.
pub fn substream(seed: u64, label: &str, index: u64) -> StageRng {
    ChaCha8Rng::from_seed(material(seed, label, index))
}

/// A child seed, for handing to components that take a plain `u64`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let m = material(seed, label, index);
    u64::from_le_bytes(m[..8].try_into().unwrap())
}
