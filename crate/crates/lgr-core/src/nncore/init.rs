//! Weight initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Scalar;

/// Kaiming-uniform samples for ReLU networks: U(-b, b) with
/// b = sqrt(6 / fan_in). Draws are sequential on `rng`, so a fixed seed
/// fixes the weights.
pub fn kaiming_uniform<S: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<S> {
    assert!(fan_in > 0, "kaiming init needs fan_in > 0");
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| S::of(rng.gen_range(-bound..bound))).collect()
}
