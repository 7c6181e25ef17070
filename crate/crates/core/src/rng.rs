//! Deterministic random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha8 stream keyed by a
//! 64-bit seed and a stream index, so draw `i` depends only on
//! `(seed, i)` and work can be split across threads without changing
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator for stream `index` of `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Seed for a named sub-task, derived from the root seed with SHA-256 so
/// that adding or reordering sub-tasks never perturbs the others.
pub fn child_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
