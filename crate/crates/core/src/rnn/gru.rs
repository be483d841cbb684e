//! GRU layer with exact backpropagation through time.
//!
//! ```text
//! z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
//! h̃_t = tanh(W_h x_t + r_t ⊙ (U_h h_{t-1}) + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ h̃_t
//! ```
//!
//! Factored weights are applied as `U (V x)`; the dense product is never formed.

use crate::error::{invalid_input, Result};
use crate::linalg::Matrix;
use crate::lowrank::{group_gru_weights, GruLayerWeights, SharingScheme, Weight, WeightKind};

/// Output of a batched weight application `x Wᵀ`, with the factored
/// intermediate `x Vᵀ` kept for the backward pass.
pub(crate) struct Applied {
    pub out: Matrix,
    pub inner: Option<Matrix>,
}

pub(crate) fn apply(w: &Weight, x: &Matrix) -> Applied {
    match w {
        Weight::Dense { w, .. } => Applied { out: x.mul_t(w), inner: None },
        Weight::Factored(f) => {
            let p = x.mul_t(f.v());
            Applied { out: p.mul_t(f.u()), inner: Some(p) }
        }
    }
}

/// Accumulates parameter gradients into `grad` (same variant as `w`) and
/// returns the gradient with respect to `x`.
pub(crate) fn apply_backward(w: &Weight, x: &Matrix, inner: Option<&Matrix>, dy: &Matrix, grad: &mut Weight) -> Matrix {
    match (w, grad) {
        (Weight::Dense { w, .. }, Weight::Dense { w: gw, .. }) => {
            gw.add_assign(&dy.t_mul(x));
            dy.mul(w)
        }
        (Weight::Factored(f), Weight::Factored(gf)) => {
            let p = inner.expect("factored weight cache");
            let dp = dy.mul(f.u());
            let (gu, gv) = gf.factors_mut();
            gu.add_assign(&dy.t_mul(p));
            gv.add_assign(&dp.t_mul(x));
            dp.mul(f.v())
        }
        _ => unreachable!("gradient layout mismatch"),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub(crate) scheme: SharingScheme,
    pub(crate) n_in: usize,
    pub(crate) n_h: usize,
    pub(crate) groups: Vec<Weight>,
    /// `b_z, b_r, b_h`.
    pub(crate) biases: [Vec<f64>; 3],
}

struct Projection {
    input: Matrix,
    inners: Vec<Option<Matrix>>,
}

struct StepCache {
    x: Projection,
    h: Projection,
    h_prev: Matrix,
    z: Matrix,
    r: Matrix,
    hh: Matrix,
    c_h: Matrix,
}

pub(crate) struct GruCache {
    steps: Vec<StepCache>,
}

impl GruLayer {
    /// Builds a layer from its six matrices; `factored` stores every group as
    /// a balanced full-rank factorization.
    pub fn from_weights(weights: &GruLayerWeights, scheme: SharingScheme, factored: bool) -> Result<Self> {
        let (n_in, n_h) = weights.validate()?;
        let groups = group_gru_weights(weights, scheme)?
            .into_iter()
            .map(|(m, kind)| {
                let w = Weight::dense(m, kind);
                if factored {
                    w.into_full_rank_factored()
                } else {
                    Ok(w)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scheme,
            n_in,
            n_h,
            groups,
            biases: [weights.b_z.clone(), weights.b_r.clone(), weights.b_h.clone()],
        })
    }

    pub(crate) fn from_groups(scheme: SharingScheme, groups: Vec<Weight>, biases: [Vec<f64>; 3]) -> Result<Self> {
        let n_h = biases[0].len();
        if n_h == 0 || biases.iter().any(|b| b.len() != n_h) {
            return Err(invalid_input("GRU biases must share a positive length"));
        }
        let expect = |i: usize, rows: usize, kind: WeightKind| -> Result<usize> {
            let g = groups.get(i).ok_or_else(|| invalid_input("missing GRU weight group"))?;
            if g.shape().0 != rows || g.kind() != kind {
                return Err(invalid_input(format!("GRU group {i} has shape {:?}, kind {:?}", g.shape(), g.kind())));
            }
            Ok(g.shape().1)
        };
        let n_in = match scheme {
            SharingScheme::PartiallyJoint => {
                if groups.len() != 2 || expect(1, 3 * n_h, WeightKind::Recurrent)? != n_h {
                    return Err(invalid_input("partially joint layer needs [3h x n_in, 3h x h]"));
                }
                expect(0, 3 * n_h, WeightKind::Nonrecurrent)?
            }
            SharingScheme::CompletelySplit => {
                if groups.len() != 6 {
                    return Err(invalid_input("completely split layer needs six groups"));
                }
                let n_in = expect(0, n_h, WeightKind::Nonrecurrent)?;
                for i in 1..3 {
                    if expect(i, n_h, WeightKind::Nonrecurrent)? != n_in {
                        return Err(invalid_input("input matrices must share a shape"));
                    }
                }
                for i in 3..6 {
                    if expect(i, n_h, WeightKind::Recurrent)? != n_h {
                        return Err(invalid_input("recurrent matrices must be square"));
                    }
                }
                n_in
            }
            SharingScheme::CompletelyJoint => {
                let cols = expect(0, 3 * n_h, WeightKind::Recurrent)?;
                if groups.len() != 1 || cols <= n_h {
                    return Err(invalid_input("joint layer needs one 3h x (n_in + h) group"));
                }
                cols - n_h
            }
        };
        Ok(Self { scheme, n_in, n_h, groups, biases })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn scheme(&self) -> SharingScheme {
        self.scheme
    }

    pub fn groups(&self) -> &[Weight] {
        &self.groups
    }

    pub fn biases(&self) -> &[Vec<f64>; 3] {
        &self.biases
    }

    /// Group names in storage order.
    pub fn group_names(&self) -> &'static [&'static str] {
        match self.scheme {
            SharingScheme::PartiallyJoint => &["nonrec", "rec"],
            SharingScheme::CompletelySplit => &["w_z", "w_r", "w_h", "u_z", "u_r", "u_h"],
            SharingScheme::CompletelyJoint => &["joint"],
        }
    }

    fn project(&self, x: &Matrix, recurrent: bool) -> (Matrix, Projection) {
        let b = x.rows();
        match self.scheme {
            SharingScheme::PartiallyJoint => {
                let a = apply(&self.groups[recurrent as usize], x);
                (a.out, Projection { input: x.clone(), inners: vec![a.inner] })
            }
            SharingScheme::CompletelySplit => {
                let base = if recurrent { 3 } else { 0 };
                let parts: Vec<Applied> = (0..3).map(|k| apply(&self.groups[base + k], x)).collect();
                let out = Matrix::hstack(&parts.iter().map(|p| &p.out).collect::<Vec<_>>()).expect("equal rows");
                (out, Projection { input: x.clone(), inners: parts.into_iter().map(|p| p.inner).collect() })
            }
            SharingScheme::CompletelyJoint => {
                let padded = if recurrent {
                    Matrix::hstack(&[&Matrix::zeros(b, self.n_in), x])
                } else {
                    Matrix::hstack(&[x, &Matrix::zeros(b, self.n_h)])
                }
                .expect("equal rows");
                let a = apply(&self.groups[0], &padded);
                (a.out, Projection { input: padded, inners: vec![a.inner] })
            }
        }
    }

    fn project_backward(&self, proj: &Projection, d_out: &Matrix, recurrent: bool, grad: &mut GruLayer) -> Matrix {
        let h = self.n_h;
        match self.scheme {
            SharingScheme::PartiallyJoint => {
                let i = recurrent as usize;
                apply_backward(&self.groups[i], &proj.input, proj.inners[0].as_ref(), d_out, &mut grad.groups[i])
            }
            SharingScheme::CompletelySplit => {
                let base = if recurrent { 3 } else { 0 };
                let mut dx: Option<Matrix> = None;
                for k in 0..3 {
                    let dk = d_out.slice_cols(k * h..(k + 1) * h);
                    let part = apply_backward(
                        &self.groups[base + k],
                        &proj.input,
                        proj.inners[k].as_ref(),
                        &dk,
                        &mut grad.groups[base + k],
                    );
                    match dx.as_mut() {
                        Some(acc) => acc.add_assign(&part),
                        None => dx = Some(part),
                    }
                }
                dx.expect("three gates")
            }
            SharingScheme::CompletelyJoint => {
                let full = apply_backward(&self.groups[0], &proj.input, proj.inners[0].as_ref(), d_out, &mut grad.groups[0]);
                if recurrent {
                    full.slice_cols(self.n_in..self.n_in + h)
                } else {
                    full.slice_cols(0..self.n_in)
                }
            }
        }
    }

    /// Runs the layer over a batch of sequences, `xs[t]: batch x n_in`.
    pub(crate) fn forward(&self, xs: &[Matrix], h0: &Matrix) -> (Vec<Matrix>, GruCache) {
        let h = self.n_h;
        let b = h0.rows();
        let mut h_prev = h0.clone();
        let mut hs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (a, xp) = self.project(x, false);
            let (c, hp) = self.project(&h_prev, true);
            let mut z = Matrix::zeros(b, h);
            let mut r = Matrix::zeros(b, h);
            let mut hh = Matrix::zeros(b, h);
            let mut c_h = Matrix::zeros(b, h);
            let mut h_new = Matrix::zeros(b, h);
            let [bz, br, bh] = &self.biases;
            for i in 0..b {
                let (ar, cr, hpr) = (a.row(i), c.row(i), h_prev.row(i));
                for j in 0..h {
                    let zv = sigmoid(ar[j] + cr[j] + bz[j]);
                    let rv = sigmoid(ar[h + j] + cr[h + j] + br[j]);
                    let ch = cr[2 * h + j];
                    let hv = (ar[2 * h + j] + rv * ch + bh[j]).tanh();
                    z.set(i, j, zv);
                    r.set(i, j, rv);
                    hh.set(i, j, hv);
                    c_h.set(i, j, ch);
                    h_new.set(i, j, (1.0 - zv) * hpr[j] + zv * hv);
                }
            }
            steps.push(StepCache { x: xp, h: hp, h_prev, z, r, hh, c_h });
            h_prev = h_new.clone();
            hs.push(h_new);
        }
        (hs, GruCache { steps })
    }

    /// Backpropagates `dhs[t]` (gradient w.r.t. each output state) through
    /// time. Accumulates into `grad` and returns gradients w.r.t. the inputs.
    pub(crate) fn backward(&self, cache: &GruCache, dhs: &[Matrix], grad: &mut GruLayer) -> Vec<Matrix> {
        let h = self.n_h;
        let b = dhs[0].rows();
        let mut dxs = vec![None; cache.steps.len()];
        let mut dh_next = Matrix::zeros(b, h);
        for t in (0..cache.steps.len()).rev() {
            let s = &cache.steps[t];
            let mut da = Matrix::zeros(b, 3 * h);
            let mut dc = Matrix::zeros(b, 3 * h);
            let mut dh_prev = Matrix::zeros(b, h);
            for i in 0..b {
                for j in 0..h {
                    let dh = dhs[t].get(i, j) + dh_next.get(i, j);
                    let (zv, rv, hv) = (s.z.get(i, j), s.r.get(i, j), s.hh.get(i, j));
                    let hp = s.h_prev.get(i, j);
                    let dz = dh * (hv - hp);
                    let dhh_pre = dh * zv * (1.0 - hv * hv);
                    let dr_pre = dhh_pre * s.c_h.get(i, j) * rv * (1.0 - rv);
                    let dz_pre = dz * zv * (1.0 - zv);
                    dh_prev.set(i, j, dh * (1.0 - zv));
                    da.set(i, j, dz_pre);
                    da.set(i, h + j, dr_pre);
                    da.set(i, 2 * h + j, dhh_pre);
                    dc.set(i, j, dz_pre);
                    dc.set(i, h + j, dr_pre);
                    dc.set(i, 2 * h + j, dhh_pre * rv);
                }
            }
            for i in 0..b {
                let row = da.row(i);
                for (gate, gb) in grad.biases.iter_mut().enumerate() {
                    for (g, d) in gb.iter_mut().zip(&row[gate * h..(gate + 1) * h]) {
                        *g += d;
                    }
                }
            }
            dxs[t] = Some(self.project_backward(&s.x, &da, false, grad));
            dh_prev.add_assign(&self.project_backward(&s.h, &dc, true, grad));
            dh_next = dh_prev;
        }
        dxs.into_iter().map(|d| d.expect("every step visited")).collect()
    }

    /// Single-sequence forward pass: `x_seq` is `T x n_in`, returns `T x n_h`.
    pub fn forward_sequence(&self, x_seq: &Matrix, h0: &[f64]) -> Result<Matrix> {
        if x_seq.cols() != self.n_in {
            return Err(invalid_input(format!("input width {} != n_in {}", x_seq.cols(), self.n_in)));
        }
        if h0.len() != self.n_h {
            return Err(invalid_input(format!("h0 length {} != n_h {}", h0.len(), self.n_h)));
        }
        let xs: Vec<Matrix> = (0..x_seq.rows()).map(|t| x_seq.slice_rows(t..t + 1)).collect();
        let h0 = Matrix::from_raw(1, self.n_h, h0.to_vec());
        let (hs, _) = self.forward(&xs, &h0);
        let rows: Vec<&Matrix> = hs.iter().collect();
        Matrix::vstack(&rows)
    }

    pub(crate) fn zeros_like(&self) -> GruLayer {
        let mut g = self.clone();
        for w in &mut g.groups {
            for t in w.tensors_mut() {
                t.as_mut_slice().fill(0.0);
            }
        }
        for b in &mut g.biases {
            b.fill(0.0);
        }
        g
    }
}
