//! Seeded, platform-independent randomness.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type DetRng = Xoshiro256PlusPlus;

pub fn rng_from_seed(seed: u64) -> DetRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers into an independent seed.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    stream.iter().fold(splitmix64(base), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}
