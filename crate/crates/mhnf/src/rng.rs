//! Named random streams.
//!
//! Every source of randomness in the crate is derived from a single 64-bit
//! seed through `stream(seed, name)`. Distinct names yield independent,
//! reproducible streams, so adding a new consumer never perturbs existing
//! ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic ChaCha stream for `(seed, name)`.
pub fn stream(seed: u64, name: &str) -> ChaCha12Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    for chunk in name.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state ^= u64::from_le_bytes(word);
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for half in key.chunks_exact_mut(8) {
        half.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// A derived 64-bit seed for `(seed, name)`, for consumers that need a seed
/// rather than a generator (e.g. per-run sub-seeds).
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut state = seed ^ 0x510e_527f_ade6_82d1;
    for chunk in name.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state ^= u64::from_le_bytes(word);
        splitmix64(&mut state);
    }
    splitmix64(&mut state)
}
