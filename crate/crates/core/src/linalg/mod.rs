//! Dense linear algebra: matrices, SVD, norms and rank selection.

mod matrix;
mod svd;

pub use matrix::Matrix;
pub use svd::{svd, SvdResult};

use crate::error::{invalid_input, Result};

/// `sqrt(Σ w_ij²)`.
pub fn frobenius_norm(w: &Matrix) -> f64 {
    w.sum_squares().sqrt()
}

/// Singular values of `w`, descending.
pub fn singular_values(w: &Matrix) -> Result<Vec<f64>> {
    svd(w).map(|s| s.sigma)
}

/// Sum of the singular values.
pub fn trace_norm(sigma: &[f64]) -> Result<f64> {
    check_nonnegative(sigma)?;
    Ok(sigma.iter().sum())
}

/// Nondimensional trace norm coefficient
/// `ν = (‖σ‖₁/‖σ‖₂ − 1) / (√d − 1)`.
///
/// Scale invariant, 0 exactly for rank one and 1 when all `d` singular values
/// coincide. Requires `d >= 2` and a nonzero `σ`.
pub fn nondim_trace_norm_coeff(sigma: &[f64]) -> Result<f64> {
    let d = sigma.len();
    if d < 2 {
        return Err(invalid_input(format!("need at least 2 singular values, got {d}")));
    }
    check_nonnegative(sigma)?;
    let l1: f64 = sigma.iter().sum();
    let l2 = sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    if l2 == 0.0 {
        return Err(invalid_input("coefficient undefined for the zero matrix"));
    }
    Ok((l1 / l2 - 1.0) / ((d as f64).sqrt() - 1.0))
}

/// Smallest `r >= 1` whose leading `r` squared singular values reach
/// `threshold` of the total energy.
pub fn rank_for_variance(sigma: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid_input(format!("threshold {threshold} outside (0, 1]")));
    }
    check_nonnegative(sigma)?;
    if sigma.windows(2).any(|p| p[0] < p[1]) {
        return Err(invalid_input("singular values must be descending"));
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(invalid_input("rank selection undefined for the zero matrix"));
    }
    let target = threshold * total;
    let mut acc = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        acc += s * s;
        if acc >= target {
            return Ok(i + 1);
        }
    }
    // `acc` reproduces `total` bit for bit, so this is only reachable by roundoff
    // in `threshold * total` exceeding `total`.
    Ok(sigma.iter().rposition(|&s| s > 0.0).map_or(1, |i| i + 1))
}

/// Balanced split `U = Ũ_r √Σ_r`, `V = √Σ_r Ṽ*_r` of the leading `r` components.
pub fn split_factors(svd: &SvdResult, r: usize) -> Result<(Matrix, Matrix)> {
    let d = svd.sigma.len();
    if r == 0 || r > d {
        return Err(invalid_input(format!("rank {r} outside [1, {d}]")));
    }
    let roots: Vec<f64> = svd.sigma[..r].iter().map(|s| s.sqrt()).collect();
    let m = svd.u.rows();
    let n = svd.vt.cols();
    let u = Matrix::from_fn(m, r, |i, j| svd.u.get(i, j) * roots[j]);
    let v = Matrix::from_fn(r, n, |i, j| roots[i] * svd.vt.get(i, j));
    Ok((u, v))
}

fn check_nonnegative(sigma: &[f64]) -> Result<()> {
    match sigma.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
        Some(s) => Err(invalid_input(format!("singular value {s} is negative or not finite"))),
        None => Ok(()),
    }
}
