//! Counter-based random substreams.
//!
//! Every random draw in the laboratory comes from a ChaCha stream keyed by a
//! root seed and a path of integer coordinates (iteration, step, worker, item,
//! ...). Two callers that derive the same path get the same stream no matter
//! how work is partitioned across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains, so that e.g. dataset item 3 and synthetic item 3 never
/// share a stream.
pub mod domain {
    pub const TASK: u64 = 0x7461_736b;
    pub const DATASET: u64 = 0x6461_7461;
    pub const SYNTHETIC: u64 = 0x7379_6e74;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const CHECK: u64 = 0x6368_6563;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the substream for `path` under `seed`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed);
    for &coord in path {
        state = splitmix64(state ^ splitmix64(coord.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    let mut lane = state;
    for chunk in key.chunks_mut(8) {
        lane = splitmix64(lane);
        chunk.copy_from_slice(&lane.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
