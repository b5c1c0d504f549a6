//! Seeded random draws with stable, version-independent semantics.
//!
//! All randomness in the crate flows through these helpers on top of a
//! ChaCha8 stream, so identical seeds reproduce identical artifacts byte for
//! byte regardless of platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[0, 1)` built from the top 53 bits of one `u64` draw.
pub fn unit(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[lo, hi)`.
pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

/// Uniform integer in `[0, n)`.
pub fn index(rng: &mut Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    (unit(rng) * n as f64) as usize % n
}

/// Standard normal via Box-Muller; consumes exactly two draws.
pub fn gaussian(rng: &mut Rng) -> f64 {
    let u1 = (unit(rng)).max(f64::MIN_POSITIVE);
    let u2 = unit(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
