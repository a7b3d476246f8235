//! Reproducible random streams.
//!
//! Every Monte-Carlo job draws from its own ChaCha8 stream, selected by the pair
//! (master seed, job index). ChaCha is counter-based, so streams are independent
//! of scheduling order and of how many workers run them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream `index` of the family keyed by `master_seed`.
pub fn stream(master_seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Deterministic sub-seed for a named purpose (e.g. a reference run next to the main run).
pub fn derive_seed(master_seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then one splitmix64 round mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master_seed ^ h;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
