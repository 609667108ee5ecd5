//! Deterministic derivation of independent RNG streams from one master seed.
//!
//! Experiments need many mutually independent randomness consumers (per
//! round, per device, per transmit slot, per trial).  Each consumer derives
//! its own 64-bit seed by mixing the master seed with a fixed tag path via
//! SplitMix64 steps, so streams never overlap and results do not depend on
//! evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One SplitMix64 scramble step.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a tag path into a derived seed.
///
/// Distinct tag paths yield (with overwhelming probability) distinct seeds;
/// the same path always yields the same seed.
pub fn mix(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xff51_afd7_ed55_8ccd).rotate_left(17);
        out ^= splitmix64(&mut state);
    }
    out
}

/// A seeded, portable RNG for the derived stream `tags` under `master`.
pub fn rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, tags))
}
