//! Affine uint8 quantization and zero-point GEMM.
//!
//! All kernels compute `C[i][j] = Σ_p (a[i][p] − a0)(b[p][j] − b0)` in `i32`.
//! [`gemm_ref`] is the plain triple loop; [`gemm_opt`] works on weights
//! prepacked by [`pack_weights`] and is specialised for 1 to 4 columns.

mod bench;
mod pack;

pub use bench::{benchmark, gemm_ops, BenchRow};
pub use pack::{gemm_opt, pack_weights, pack_weights_with, PackLayout, PackedWeights};

use crate::error::{invalid_input, Result};
use crate::linalg::Matrix;

/// Largest inner dimension for which no partial sum can leave the `i32` range:
/// `k · 255² ≤ 2³¹ − 1`.
pub const MAX_K: usize = (i32::MAX as usize) / (255 * 255);

/// Per-tensor affine mapping `x ≈ scale · (q − zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    scale: f64,
    zero_point: u8,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: u8) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid_input(format!("scale must be positive and finite, got {scale}")));
        }
        Ok(Self { scale, zero_point })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn zero_point(&self) -> u8 {
        self.zero_point
    }

    pub fn quantize_value(&self, x: f64) -> u8 {
        let q = (x / self.scale).round_ties_even() + f64::from(self.zero_point);
        q.clamp(0.0, 255.0) as u8
    }

    pub fn dequantize_value(&self, q: u8) -> f64 {
        self.scale * (i32::from(q) - i32::from(self.zero_point)) as f64
    }
}

/// Parameters covering `[min, max]` widened to contain 0, so that 0 maps to
/// an exact code. `min = max = 0` gives `scale = 1, zero_point = 0`.
pub fn choose_quant_params(min: f64, max: f64) -> Result<QuantParams> {
    if !min.is_finite() || !max.is_finite() || min > max {
        return Err(invalid_input(format!("invalid range [{min}, {max}]")));
    }
    let lo = min.min(0.0);
    let hi = max.max(0.0);
    if lo == hi {
        return QuantParams::new(1.0, 0);
    }
    let span = hi - lo;
    // -lo / scale, written without forming the rounded scale first
    let zp = (-lo * 255.0 / span).round_ties_even().clamp(0.0, 255.0) as u8;
    QuantParams::new(span / 255.0, zp)
}

/// Row-major uint8 matrix with its quantization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
    params: QuantParams,
}

impl QuantizedMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>, params: QuantParams) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid_input(format!("dimensions must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(invalid_input(format!("{} bytes for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data, params })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }

    pub fn zero_point(&self) -> u8 {
        self.params.zero_point
    }
}

pub fn quantize(m: &Matrix, params: QuantParams) -> Result<QuantizedMatrix> {
    if !m.is_finite() {
        return Err(invalid_input("cannot quantize non-finite entries"));
    }
    let data = m.as_slice().iter().map(|&x| params.quantize_value(x)).collect();
    QuantizedMatrix::new(m.rows(), m.cols(), data, params)
}

pub fn dequantize(q: &QuantizedMatrix) -> Matrix {
    let data = q.data.iter().map(|&v| q.params.dequantize_value(v)).collect();
    Matrix::from_raw(q.rows, q.cols, data)
}

/// Row-major `i32` accumulators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GemmResult {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
}

impl GemmResult {
    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.data[i * self.cols + j]
    }
}

fn check_inner(m: usize, k: usize, kb: usize) -> Result<()> {
    if k != kb {
        return Err(invalid_input(format!("inner dimensions differ: {m}x{k} times {kb}xN")));
    }
    if k > MAX_K {
        return Err(invalid_input(format!("k = {k} exceeds the i32-safe bound {MAX_K}")));
    }
    Ok(())
}

/// Naive triple loop; the correctness oracle for every other kernel.
pub fn gemm_ref(a: &QuantizedMatrix, b: &QuantizedMatrix) -> Result<GemmResult> {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    check_inner(m, k, b.rows)?;
    let a0 = i32::from(a.zero_point());
    let b0 = i32::from(b.zero_point());
    let mut out = vec![0i32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0i32;
            for p in 0..k {
                acc += (i32::from(a.data[i * k + p]) - a0) * (i32::from(b.data[p * n + j]) - b0);
            }
            out[i * n + j] = acc;
        }
    }
    Ok(GemmResult { rows: m, cols: n, data: out })
}
