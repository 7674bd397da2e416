//! Deterministic RNG stream derivation.
//!
//! Every command takes one master seed; all randomness (corpus synthesis,
//! parameter init, corruption draws, batch shuffling, dropout, scheduled
//! sampling) flows from it through named sub-streams, so independent stages
//! never share a stream and reruns are bit-reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from a master seed and a path such as
/// `"corrupt/e3/p17"`. Distinct paths give independent streams.
pub fn stream_seed(master: u64, path: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(b"/");
    h.update(path.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// A ChaCha RNG for the given stream. ChaCha output is identical across
/// platforms, which keeps every seeded artifact byte-stable.
pub fn stream_rng(master: u64, path: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stream_seed(master, path))
}
