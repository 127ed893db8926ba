//! Seeded randomness. Every stage draws from its own ChaCha stream, selected
//! by hashing the stage label, so stages stay reproducible independently of
//! one another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, 64-bit. Stable across platforms and compiler versions.
fn fnv1a(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// RNG for `stage` under the run-level `seed`.
pub fn stage_rng(seed: u64, stage: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(stage));
    rng
}
