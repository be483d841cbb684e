//! Single-threaded throughput measurement of the GEMM kernels.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gemm_opt, gemm_ref, pack_weights, QuantParams, QuantizedMatrix};
use crate::error::{invalid_input, Result};

/// One `(kernel, batch)` measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// `gemm_ref`, `gemm_opt`, or `gemm_opt_chunked` for batches above 4.
    pub kernel: &'static str,
    pub m: usize,
    pub k: usize,
    pub batch: usize,
    pub reps: usize,
    pub median_seconds: f64,
    pub gops: f64,
}

/// Operation count of one `m x k` by `k x batch` product (multiply and add
/// counted separately).
pub fn gemm_ops(m: usize, k: usize, batch: usize) -> u64 {
    2 * (m as u64) * (k as u64) * (batch as u64)
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> QuantizedMatrix {
    let data = (0..rows * cols).map(|_| rng.random()).collect();
    let zp = rng.random();
    QuantizedMatrix::new(rows, cols, data, QuantParams::new(1.0, zp).expect("unit scale")).expect("shape")
}

fn median_seconds(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let mid = reps / 2;
    if reps % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    }
}

/// Times `gemm_ref` and `gemm_opt` on random `m x k` weights for each batch
/// size, on the calling thread. Weights are packed once outside the timing.
pub fn benchmark(m: usize, k: usize, batches: &[usize], reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if m == 0 || k == 0 || reps == 0 || batches.is_empty() || batches.contains(&0) {
        return Err(invalid_input("benchmark sizes, batches and repetitions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random(m, k, &mut rng);
    let packed = pack_weights(&a);
    let mut rows = Vec::with_capacity(2 * batches.len());
    for &batch in batches {
        let b = random(k, batch, &mut rng);
        if gemm_opt(&packed, &b)? != gemm_ref(&a, &b)? {
            return Err(invalid_input("optimized kernel disagrees with the reference"));
        }
        let opt_name = if batch <= 4 { "gemm_opt" } else { "gemm_opt_chunked" };
        let t_ref = median_seconds(reps, || {
            black_box(gemm_ref(black_box(&a), black_box(&b)).expect("checked"));
        });
        let t_opt = median_seconds(reps, || {
            black_box(gemm_opt(black_box(&packed), black_box(&b)).expect("checked"));
        });
        let ops = gemm_ops(m, k, batch) as f64;
        for (kernel, t) in [("gemm_ref", t_ref), (opt_name, t_opt)] {
            rows.push(BenchRow { kernel, m, k, batch, reps, median_seconds: t, gops: ops / t.max(1e-12) / 1e9 });
        }
    }
    Ok(rows)
}
