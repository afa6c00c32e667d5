//! Counter-addressed random streams.
//!
//! Every random draw in training and evaluation comes from a stream keyed by
//! `(seed, purpose, a, b)`, typically `(seed, purpose, iteration, sample)`.
//! Results therefore do not depend on worker count, scheduling, or whether a
//! run was resumed from a checkpoint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; keeps streams for different purposes disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Levels = 2,
    Patch = 3,
    Noise = 4,
    Eval = 5,
    Test = 6,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let words = [purpose as u64, a, b];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        if i > 0 {
            state ^= words[i - 1].wrapping_mul(0xD6E8_FEB8_6659_FD93);
        }
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
