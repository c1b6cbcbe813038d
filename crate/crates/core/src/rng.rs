//! Deterministic seeding. Every random stream in the simulators is a
//! `Xoshiro256PlusPlus` whose seed is derived from the user seed plus a
//! purpose tag and an index, so results never depend on call order or on
//! how work is split across blocks.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a purpose tag and an index into a new 64-bit seed.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ purpose) ^ index)
}

pub fn rng_for(seed: u64, purpose: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, purpose, index))
}

pub(crate) mod purpose {
    pub const EMISSION: u64 = 0x656d_6974;
    pub const HBT_ROUTING: u64 = 0x6862_7472;
    pub const HOM_ROUTING: u64 = 0x686f_6d72;
    pub const DETECTOR: u64 = 0x6465_7465;
    pub const SEGMENT: u64 = 0x7365_676d;
}
