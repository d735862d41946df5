//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator obtained
//! through [`stream`]. The 256-bit key is derived from `(seed, purpose)` with
//! SplitMix64, and the ChaCha stream id is the item index (snapshot number,
//! layer number, restart number, epoch). Two draws therefore never share a
//! stream unless they share seed, purpose and index, and the output is
//! identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is mixed into the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ChannelSnapshot = 0x6368_616e,
    WeightInit = 0x696e_6974,
    LabelRestart = 0x6c61_6265,
    Minibatch = 0x6261_7463,
    LabelSubset = 0x7375_6273,
    Misc = 0x6d69_7363,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ (purpose as u64).rotate_left(32);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
