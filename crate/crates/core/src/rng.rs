//! Counter-based random sub-streams.
//!
//! Every stochastic draw in a run comes from a stream keyed by
//! `(master seed, purpose, entity, counter)`, so results never depend on the
//! order in which users or rounds are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Placement = 1,
    CpuFrequency = 2,
    ClassShares = 3,
    ClassPool = 4,
    ModelInit = 5,
    LocalUpdate = 6,
    Fading = 7,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, purpose, entity, counter)`.
pub fn stream(seed: u64, purpose: Purpose, entity: u64, counter: u64) -> StreamRng {
    let mut state = seed;
    let mut mixed = splitmix64(&mut state);
    for word in [purpose as u64, entity, counter] {
        state ^= word.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ mixed;
        mixed = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
