//! Counter-based random substreams.
//!
//! Every independent unit of work (a molecule, a Monte-Carlo draw, a
//! background process) owns a ChaCha stream selected by its index, so
//! results do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream reserved for the background photon process.
pub const BACKGROUND_STREAM: u64 = u64::MAX;

/// Stream reserved for channel assignment of background photons.
pub const BACKGROUND_SPLIT_STREAM: u64 = u64::MAX - 1;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives the seed of repeat `index` from a master seed (splitmix64 step).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
