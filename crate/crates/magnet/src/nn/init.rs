//! Seeded weight initialization.

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::Rng;

use super::Scalar;

/// Fan-in-scaled uniform initialization: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
/// Biases start at zero.
pub fn fan_in_uniform<F: Scalar>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut StdRng,
) -> (Array2<F>, Array1<F>) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let weight = Array2::from_shape_simple_fn((rows, cols), || {
        F::from_f64(rng.gen_range(-bound..bound))
    });
    (weight, Array1::zeros(cols))
}
