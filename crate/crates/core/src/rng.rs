//! Deterministic stream derivation.
//!
//! Every stochastic routine in this crate derives its generator from a master
//! seed plus a list of tag words (chain index, step index, phase, ...) through
//! a SplitMix64 avalanche. Streams are therefore independent of thread count
//! and execution order: chain 17's noise at step 42 is the same whether it is
//! computed first, last, or on another worker.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Phase tags used across the crate. Kept in one place so that no two call
/// sites can collide on the same derived stream.
pub mod tags {
    pub const GMM_SAMPLE: u64 = 0x01;
    pub const FORWARD_X0: u64 = 0x02;
    pub const FORWARD_NOISE: u64 = 0x03;
    pub const CHAIN_INIT: u64 = 0x04;
    pub const CHAIN_STEP: u64 = 0x05;
    pub const FIELD_FREQ: u64 = 0x06;
    pub const FIELD_CALIBRATE: u64 = 0x07;
    pub const MEAN_JITTER: u64 = 0x08;
    pub const MEASURE_T: u64 = 0x09;
    pub const PROBE_T: u64 = 0x0a;
    pub const PROJECTION: u64 = 0x0b;
    pub const CELL: u64 = 0x0c;
    pub const CONTAMINANT: u64 = 0x0d;
    pub const NOISE_FLOOR: u64 = 0x0e;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapses `(seed, words)` into a single well-mixed 64-bit value.
pub fn mix(seed: u64, words: &[u64]) -> u64 {
    let mut state = seed ^ 0x6a09_e667_f3bc_c909;
    let mut acc = splitmix64(&mut state);
    for &w in words {
        state ^= w;
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Derives an independent ChaCha8 stream for `(seed, words)`.
pub fn derive_rng(seed: u64, words: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed, words);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
