//! Seeded random streams.
//!
//! Every randomized operation takes an explicit seed; independent consumers of
//! the same seed get separate ChaCha streams so that e.g. turning on hard
//! negatives does not perturb batch order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeedRng = ChaCha8Rng;

pub mod stream {
    pub const INIT: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const CONDITIONS: u64 = 3;
    pub const HARD_NEGATIVES: u64 = 4;
    pub const ANN_LEVELS: u64 = 5;
    pub const EVAL_QUERIES: u64 = 6;
    pub const ITEMS: u64 = 7;
    pub const USERS: u64 = 8;
    pub const EVENTS: u64 = 9;
    pub const SPLIT: u64 = 10;
    pub const GRAD_CHECK: u64 = 11;
}

pub fn seeded(seed: u64, stream: u64) -> SeedRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes an extra index (epoch, batch, ...) into a seed.
pub fn derive(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
