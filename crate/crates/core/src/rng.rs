//! Seeded random streams.
//!
//! Every stream is xoshiro256** whose 256-bit state is expanded from a
//! 64-bit seed with splitmix64. Independent streams for replication `r` of
//! an experiment seeded with `master` use [`derive_seed`].

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type Stream = Xoshiro256StarStar;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The splitmix64 output function.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `master`: the `index + 1`-th
/// splitmix64 output of a generator started at `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn stream(seed: u64) -> Stream {
    Xoshiro256StarStar::seed_from_u64(seed)
}

pub fn child_stream(master: u64, index: u64) -> Stream {
    stream(derive_seed(master, index))
}
