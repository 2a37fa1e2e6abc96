//! Deterministic, replayable random streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, purpose tag, indices...)`. Streams for different keys are
//! independent ChaCha generators, so replicas can run in any order (or in
//! parallel) and coupled experiments can reuse the exact same randomness for
//! a shared sub-key.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags separating the independent randomness uses of one seed.
pub mod tag {
    pub const COUNT: u64 = 0x01;
    pub const ATOM: u64 = 0x02;
    pub const RELAY_CHOICE: u64 = 0x03;
    pub const LEVEL_POINT: u64 = 0x04;
    pub const REPLICA: u64 = 0x05;
    pub const DRIVER: u64 = 0x06;
    pub const PILOT: u64 = 0x07;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapses `(seed, key words)` into a single well-mixed 64-bit key.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    let mut state = seed ^ 0xA076_1D64_78BD_642F;
    let mut acc = splitmix64(&mut state);
    for &k in keys {
        state ^= k.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// One uniform draw in `[0, 1)` from the stream `(seed, keys...)`.
pub fn uniform_draw(seed: u64, keys: &[u64]) -> f64 {
    use rand::Rng;
    stream(seed, keys).random()
}

/// A fresh generator for the stream identified by `(seed, keys...)`.
pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut state = derive(seed, keys);
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
