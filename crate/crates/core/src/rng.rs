//! Seeded random streams. Every stochastic choice in a run draws from a
//! stream derived from the run seed and a fixed tag, so runs replay exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `stream` (and an optional index such as
/// the epoch number) from a base seed.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    let mut h = mix64(base);
    for b in stream.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ index)
}

pub fn stream(base: u64, name: &str, index: u64) -> RunRng {
    RunRng::seed_from_u64(derive_seed(base, name, index))
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
