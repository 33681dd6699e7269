//! The single pseudo-random generator used everywhere in the crate.
//!
//! All randomness (synthetic banks, weight init, shuffling, dropout masks,
//! landscape directions) is drawn from xoshiro256++ seeded through
//! SplitMix64 (`seed_from_u64`). Gaussian draws use `rand_distr`'s
//! `StandardNormal` (ziggurat). Pin both crate versions to keep streams
//! reproducible.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a purpose tag.
///
/// Uses one SplitMix64 round so nearby base seeds do not produce
/// correlated child streams.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
