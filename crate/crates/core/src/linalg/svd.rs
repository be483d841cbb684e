//! One-sided Jacobi SVD.
//!
//! Columns of a working copy are rotated pairwise (cyclic order) until every
//! pair is orthogonal to a relative tolerance of `1e-14`, or 60 sweeps have
//! run. Column norms are then the singular values. Wide inputs are handled
//! by factoring the transpose.

use super::matrix::{dot, Matrix};
use crate::error::{invalid_input, Result};

const ROTATION_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 60;

/// Thin SVD `w = u * diag(sigma) * vt` with `d = min(m, n)` components.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `m x d`, orthonormal columns.
    pub u: Matrix,
    /// Descending, nonnegative.
    pub sigma: Vec<f64>,
    /// `d x n`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.sigma) {
                *x *= s;
            }
        }
        us.mul(&self.vt)
    }

    /// Number of strictly positive singular values.
    pub fn rank(&self) -> usize {
        self.sigma.iter().filter(|&&s| s > 0.0).count()
    }
}

pub fn svd(w: &Matrix) -> Result<SvdResult> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(invalid_input("svd of an empty matrix"));
    }
    if !w.is_finite() {
        return Err(invalid_input("svd input has non-finite entries"));
    }
    let (m, n) = w.shape();
    let mut out = if m >= n {
        let (u, sigma, v) = jacobi_tall(w);
        SvdResult { u, sigma, vt: v.transpose() }
    } else {
        // wᵀ = U' Σ V'ᵀ  =>  w = V' Σ U'ᵀ
        let (u_t, sigma, v_t) = jacobi_tall(&w.transpose());
        SvdResult { u: v_t, sigma, vt: u_t.transpose() }
    };
    fix_signs(&mut out);
    Ok(out)
}

/// Factors a matrix with `rows >= cols`. Returns `(U: m x n, sigma, V: n x n)`.
fn jacobi_tall(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns below this norm are numerically zero; rotating them only churns
    // roundoff, and they are reported as exact zeros.
    let frob = a.sum_squares().sqrt();
    let negligible = m as f64 * f64::EPSILON * frob;
    let negligible_sq = negligible * negligible;

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                if alpha <= negligible_sq || beta <= negligible_sq {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + 1f64.hypot(zeta));
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: ties keep sweep order.
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut sigma = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        if s <= negligible || s == 0.0 {
            sigma.push(0.0);
            u_cols.push(vec![0.0; m]);
            missing.push(slot);
        } else {
            sigma.push(s);
            u_cols.push(cols[j].iter().map(|x| x / s).collect());
        }
    }
    complete_basis(&mut u_cols, &missing);

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let vmat = Matrix::from_fn(n, n, |i, j| v[order[j]][i]);
    (u, sigma, vmat)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed slots with unit vectors orthogonal to every other column.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut filled: Vec<bool> = vec![true; cols.len()];
    for &slot in missing {
        filled[slot] = false;
    }
    for &slot in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            // Two Gram-Schmidt passes keep the result orthogonal to working precision.
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if filled[k] {
                        let proj = dot(&e, c);
                        for (x, y) in e.iter_mut().zip(c) {
                            *x -= proj * y;
                        }
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, e));
            }
        }
        let (norm, e) = best.expect("m >= 1");
        cols[slot] = e.into_iter().map(|x| x / norm).collect();
        filled[slot] = true;
    }
}

/// Makes the first significant entry of every left singular vector positive.
fn fix_signs(svd: &mut SvdResult) {
    let (m, d) = svd.u.shape();
    for j in 0..d {
        let lead = (0..m).map(|i| svd.u.get(i, j)).find(|x| x.abs() > 1e-12);
        if lead.is_some_and(|x| x < 0.0) {
            for i in 0..m {
                let x = svd.u.get(i, j);
                svd.u.set(i, j, -x);
            }
            for x in svd.vt.row_mut(j) {
                *x = -*x;
            }
        }
    }
}
