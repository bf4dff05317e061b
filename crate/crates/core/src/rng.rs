//! Named random streams.
//!
//! Every random quantity in the toolkit comes from a ChaCha8 stream whose
//! 256-bit key is `SHA-256(domain || 0x00 || seed as u64 LE || name)`.
//! ChaCha8 is counter based, so a stream is a pure function of
//! `(domain, seed, name)`: adding or removing other streams never shifts it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Stream domains. Kept distinct so e.g. init weights and per-layer noise
/// for the same parameter name never share a key.
pub mod domain {
    pub const INIT: &str = "init";
    pub const NOISE: &str = "noise";
    pub const TRANSFER: &str = "transfer";
    pub const SAMPLE: &str = "sample";
    pub const PROJECT: &str = "project";
}

pub fn stream(domain: &str, seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// `len` standard-normal draws from the named stream.
pub fn normal_vec(domain: &str, seed: u64, name: &str, len: usize) -> Vec<f32> {
    let mut rng = stream(domain, seed, name);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}
