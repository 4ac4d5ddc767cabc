//! Deterministic stream derivation from a single base seed.
//!
//! Every source of randomness in the crate is a `ChaCha8Rng` derived from
//! the base seed plus a list of stream tags (run id, epoch, scenario index,
//! agent index, ...). Two invocations with the same seed and tags always
//! produce identical draws, which keeps batch runs reproducible regardless
//! of thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche behavior for cheap seed mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of stream tags into a single 64-bit state.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = mix(base);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    state
}

/// Builds a deterministic RNG for the stream identified by `tags`.
pub fn derive_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stable tags for the major stream families, kept in one place so callers
/// cannot collide by accident.
pub mod stream {
    pub const MARKET: u64 = 1;
    pub const AGENT: u64 = 2;
    pub const NEWS: u64 = 3;
    pub const EPOCH: u64 = 4;
    pub const SCENARIO: u64 = 5;
    pub const ATTACK: u64 = 6;
}
