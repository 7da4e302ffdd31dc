//! Seeded randomness.
//!
//! Every stochastic draw in the engine goes through [`EngineRng`], a
//! xoshiro256++ generator whose 256-bit state is expanded from a 64-bit seed
//! with splitmix64. Independent streams are obtained with [`derive_seed`],
//! so adding draws to one stage never shifts the numbers seen by another.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type EngineRng = Xoshiro256PlusPlus;

/// Creates the engine generator for `seed` (splitmix64 state expansion).
pub fn rng_from_seed(seed: u64) -> EngineRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// One splitmix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and a counter into a new seed.
pub fn derive_seed(base: u64, stream: &str, counter: u64) -> u64 {
    // FNV-1a over the tag keeps stream ids stable across builds.
    let mut tag: u64 = 0xCBF2_9CE4_8422_2325;
    for b in stream.bytes() {
        tag ^= u64::from(b);
        tag = tag.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(base ^ tag).wrapping_add(counter))
}
