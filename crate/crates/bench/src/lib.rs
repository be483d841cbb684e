//! Shared inputs for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracenorm_core::{Matrix, QuantParams, QuantizedMatrix};

/// Uniformly random bytes with fixed zero points, seeded for repeatability.
pub fn random_quantized(rows: usize, cols: usize, zero_point: u8, seed: u64) -> QuantizedMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random()).collect();
    let params = QuantParams::new(1.0, zero_point).expect("valid params");
    QuantizedMatrix::new(rows, cols, data, params).expect("consistent shape")
}

/// Standard-uniform entries in `[-1, 1)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}
