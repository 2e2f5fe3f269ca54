//! Counter-based seed derivation.
//!
//! Every random quantity is drawn from a ChaCha stream keyed by
//! `(run seed, derivation path)`, so replicates are reproducible and can be
//! generated in parallel without sharing generator state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent generator from a run seed and a derivation path
/// (e.g. `[replicate, step]`).
pub fn derive_rng(seed: u64, path: &[u64]) -> ChaCha12Rng {
    let mut state = mix(seed ^ 0x5bf0_3635_dcb2_9359);
    for &p in path {
        state = mix(state ^ mix(p));
    }
    let mut key = [0u8; 32];
    let mut z = state;
    for chunk in key.chunks_mut(8) {
        z = mix(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
