//! Seeded random streams.
//!
//! Every stochastic routine draws from ChaCha20 (`rand_chacha::ChaCha20Rng`).
//! ChaCha20 is a counter-based generator with a fixed, platform-independent
//! output stream, so identical seeds give identical results everywhere.
//! Independent streams for indexed objects (schedule step `n`, MPS site `k`)
//! are selected with `set_stream`, which makes the draw for index `n`
//! independent of the order in which indices are visited.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type QRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> QRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator keyed by `seed`.
pub fn stream(seed: u64, index: u64) -> QRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Standard complex Gaussian: real and imaginary parts i.i.d. N(0, 1/2).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
