//! Factored weights `W = UV`, GRU weight grouping and SVD warmstarts.

use std::fmt;

use crate::error::{invalid_input, Result};
use crate::linalg::{rank_for_variance, split_factors, svd, Matrix};

/// Whether a weight multiplies the recurrent state or the layer input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    Recurrent,
    Nonrecurrent,
}

/// `W = U V` with `U: m x r`, `V: r x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredLayer {
    u: Matrix,
    v: Matrix,
    kind: WeightKind,
}

impl FactoredLayer {
    pub fn new(u: Matrix, v: Matrix, kind: WeightKind) -> Result<Self> {
        let r = u.cols();
        if v.rows() != r {
            return Err(invalid_input(format!(
                "factor inner dimensions differ: U is {}x{}, V is {}x{}",
                u.rows(),
                u.cols(),
                v.rows(),
                v.cols()
            )));
        }
        if r > u.rows().min(v.cols()) {
            return Err(invalid_input(format!(
                "rank {r} exceeds min({}, {})",
                u.rows(),
                v.cols()
            )));
        }
        Ok(Self { u, v, kind })
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub(crate) fn factors_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.u, &mut self.v)
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.rows(), self.v.cols())
    }

    pub fn parameter_count(&self) -> usize {
        self.u.len() + self.v.len()
    }
}

/// `U · V`.
pub fn recover(layer: &FactoredLayer) -> Matrix {
    layer.u.mul(&layer.v)
}

/// How many components to keep when warmstarting from an SVD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Keep enough components to explain this fraction of the squared spectrum.
    Threshold(f64),
    /// Keep exactly this many components (capped at `min(m, n)`).
    Rank(usize),
}

/// Factors `w` from its truncated SVD, keeping enough components to reach
/// `threshold` of the spectral energy.
pub fn warmstart_from_svd(w: &Matrix, threshold: f64, kind: WeightKind) -> Result<FactoredLayer> {
    warmstart(w, Truncation::Threshold(threshold), kind)
}

pub fn warmstart(w: &Matrix, truncation: Truncation, kind: WeightKind) -> Result<FactoredLayer> {
    let dec = svd(w)?;
    let r = match truncation {
        Truncation::Threshold(t) => rank_for_variance(&dec.sigma, t)?,
        Truncation::Rank(0) => return Err(invalid_input("truncation rank must be at least 1")),
        Truncation::Rank(r) => r.min(dec.sigma.len()),
    };
    let (u, v) = split_factors(&dec, r)?;
    FactoredLayer::new(u, v, kind)
}

/// A trainable weight matrix, stored either densely or as two factors.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Dense { w: Matrix, kind: WeightKind },
    Factored(FactoredLayer),
}

impl Weight {
    pub fn dense(w: Matrix, kind: WeightKind) -> Self {
        Weight::Dense { w, kind }
    }

    pub fn kind(&self) -> WeightKind {
        match self {
            Weight::Dense { kind, .. } => *kind,
            Weight::Factored(f) => f.kind(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Weight::Dense { w, .. } => w.shape(),
            Weight::Factored(f) => f.shape(),
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, Weight::Factored(_))
    }

    pub fn recover(&self) -> Matrix {
        match self {
            Weight::Dense { w, .. } => w.clone(),
            Weight::Factored(f) => recover(f),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.param_shape().count()
    }

    pub fn param_shape(&self) -> ParamShape {
        let (rows, cols) = self.shape();
        match self {
            Weight::Dense { .. } => ParamShape::Dense { rows, cols },
            Weight::Factored(f) => ParamShape::Factored { rows, cols, rank: f.rank() },
        }
    }

    /// Balanced full-rank factorization `r = min(m, n)` of the same matrix.
    pub fn into_full_rank_factored(self) -> Result<Weight> {
        match self {
            Weight::Dense { w, kind } => {
                let dec = svd(&w)?;
                let (u, v) = split_factors(&dec, dec.sigma.len())?;
                Ok(Weight::Factored(FactoredLayer::new(u, v, kind)?))
            }
            f @ Weight::Factored(_) => Ok(f),
        }
    }

    /// Replaces the weight with a factored warmstart of `recover()`.
    pub fn truncated(&self, truncation: Truncation) -> Result<Weight> {
        warmstart(&self.recover(), truncation, self.kind()).map(Weight::Factored)
    }

    /// The stored tensors in a fixed order: `[w]` or `[u, v]`.
    pub fn tensors(&self) -> Vec<&Matrix> {
        match self {
            Weight::Dense { w, .. } => vec![w],
            Weight::Factored(f) => vec![&f.u, &f.v],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Weight::Dense { w, .. } => vec![w],
            Weight::Factored(f) => {
                let (u, v) = f.factors_mut();
                vec![u, v]
            }
        }
    }
}

/// Shape of one stored parameter block, for counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamShape {
    Dense { rows: usize, cols: usize },
    Factored { rows: usize, cols: usize, rank: usize },
    Bias(usize),
}

impl ParamShape {
    pub fn count(&self) -> usize {
        match *self {
            ParamShape::Dense { rows, cols } => rows * cols,
            ParamShape::Factored { rows, cols, rank } => rank * (rows + cols),
            ParamShape::Bias(n) => n,
        }
    }
}

/// Total number of stored reals.
pub fn parameter_count(model: &[ParamShape]) -> usize {
    model.iter().map(ParamShape::count).sum()
}

/// How the six GRU matrices are grouped before factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SharingScheme {
    /// One `3h x (n_in + h)` matrix acting on `[x; h]`.
    CompletelyJoint,
    /// Input stack `3h x n_in` and recurrent stack `3h x h`.
    #[default]
    PartiallyJoint,
    /// Six separate matrices.
    CompletelySplit,
}

impl SharingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            SharingScheme::CompletelyJoint => "completely_joint",
            SharingScheme::PartiallyJoint => "partially_joint",
            SharingScheme::CompletelySplit => "completely_split",
        }
    }
}

impl fmt::Display for SharingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SharingScheme {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "completely_joint" | "joint" => Ok(SharingScheme::CompletelyJoint),
            "partially_joint" | "partial" => Ok(SharingScheme::PartiallyJoint),
            "completely_split" | "split" => Ok(SharingScheme::CompletelySplit),
            other => Err(crate::error::invalid_config(format!("unknown sharing scheme {other:?}"))),
        }
    }
}

/// The six GRU matrices and three biases, gates ordered `z, r, h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerWeights {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruLayerWeights {
    pub fn validate(&self) -> Result<(usize, usize)> {
        let (h, n_in) = self.w_z.shape();
        let ws = [&self.w_z, &self.w_r, &self.w_h];
        let us = [&self.u_z, &self.u_r, &self.u_h];
        if ws.iter().any(|w| w.shape() != (h, n_in)) {
            return Err(invalid_input("input matrices must share a shape"));
        }
        if us.iter().any(|u| u.shape() != (h, h)) {
            return Err(invalid_input(format!("recurrent matrices must be {h}x{h}")));
        }
        if [&self.b_z, &self.b_r, &self.b_h].iter().any(|b| b.len() != h) {
            return Err(invalid_input(format!("biases must have length {h}")));
        }
        Ok((n_in, h))
    }
}

/// Groups the GRU matrices according to `scheme`.
///
/// `CompletelySplit` yields `w_z, w_r, w_h, u_z, u_r, u_h` in that order.
pub fn group_gru_weights(w: &GruLayerWeights, scheme: SharingScheme) -> Result<Vec<(Matrix, WeightKind)>> {
    w.validate()?;
    let input = || Matrix::vstack(&[&w.w_z, &w.w_r, &w.w_h]);
    let rec = || Matrix::vstack(&[&w.u_z, &w.u_r, &w.u_h]);
    Ok(match scheme {
        SharingScheme::PartiallyJoint => vec![
            (input()?, WeightKind::Nonrecurrent),
            (rec()?, WeightKind::Recurrent),
        ],
        SharingScheme::CompletelySplit => {
            let mut out: Vec<(Matrix, WeightKind)> = [&w.w_z, &w.w_r, &w.w_h]
                .into_iter()
                .map(|m| (m.clone(), WeightKind::Nonrecurrent))
                .collect();
            out.extend([&w.u_z, &w.u_r, &w.u_h].into_iter().map(|m| (m.clone(), WeightKind::Recurrent)));
            out
        }
        SharingScheme::CompletelyJoint => {
            vec![(Matrix::hstack(&[&input()?, &rec()?])?, WeightKind::Recurrent)]
        }
    })
}

/// Splits grouped matrices back into the six GRU matrices; biases are taken
/// from `biases` (`b_z, b_r, b_h`).
pub fn ungroup_gru_weights(
    groups: &[Matrix],
    scheme: SharingScheme,
    biases: [Vec<f64>; 3],
) -> Result<GruLayerWeights> {
    let thirds = |m: &Matrix| -> Result<[Matrix; 3]> {
        if !m.rows().is_multiple_of(3) {
            return Err(invalid_input(format!("stack of {} rows is not divisible by 3", m.rows())));
        }
        let h = m.rows() / 3;
        Ok([m.slice_rows(0..h), m.slice_rows(h..2 * h), m.slice_rows(2 * h..3 * h)])
    };
    let ([w_z, w_r, w_h], [u_z, u_r, u_h]) = match (scheme, groups) {
        (SharingScheme::PartiallyJoint, [w, u]) => (thirds(w)?, thirds(u)?),
        (SharingScheme::CompletelySplit, [a, b, c, d, e, f]) => {
            ([a.clone(), b.clone(), c.clone()], [d.clone(), e.clone(), f.clone()])
        }
        (SharingScheme::CompletelyJoint, [j]) => {
            let h = j.rows() / 3;
            if j.cols() <= h {
                return Err(invalid_input("joint matrix too narrow"));
            }
            let n_in = j.cols() - h;
            (thirds(&j.slice_cols(0..n_in))?, thirds(&j.slice_cols(n_in..n_in + h))?)
        }
        (s, g) => return Err(invalid_input(format!("{s} expects a different group count than {}", g.len()))),
    };
    let [b_z, b_r, b_h] = biases;
    let out = GruLayerWeights { w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h };
    out.validate()?;
    Ok(out)
}
