//! Seeded, splittable randomness.
//!
//! Every stochastic draw in the crate comes from a [`SplitMix64`] generator
//! (64-bit state, Steele/Lea/Flood 2014). Independent streams are derived
//! from a base seed and a textual label so that adding a component never
//! shifts the draws of another one.

use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

pub type Rng = SplitMix64;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a stream label (FNV-1a over the label,
/// then mixed with the parent seed).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(seed ^ mix(h))
}

pub fn stream(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, label))
}
