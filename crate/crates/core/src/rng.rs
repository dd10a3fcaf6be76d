//! Seeded, counter-based random number generation.
//!
//! Every stochastic operation in the crate draws from an explicitly
//! threaded ChaCha stream so identical seeds replay bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child stream: mixes a label into the parent seed so that
/// subsystems (init, data, noise, ...) never share a stream.
pub fn derive(seed: u64, label: u64) -> SeededRng {
    seeded(seed ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
