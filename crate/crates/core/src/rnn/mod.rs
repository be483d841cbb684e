//! GRU sequence classifier with hand-derived gradients.
//!
//! A [`Network`] is a stack of GRU layers followed by a dense softmax layer
//! reading the final hidden state. Every weight group may be dense or
//! factored; gradients for factored groups are taken directly with respect
//! to `U` and `V`.

mod data;
mod gru;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use data::{Batch, Dataset, TaskConfig};
pub use gru::GruLayer;

use crate::error::{invalid_input, Error, Result};
use crate::linalg::Matrix;
use crate::lowrank::{parameter_count, FactoredLayer, ParamShape, SharingScheme, Weight, WeightKind};
use gru::{apply, apply_backward, GruCache};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Architecture of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub n_in: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub sharing: SharingScheme,
    /// Store every GRU weight group as a full-rank factorization. The
    /// classifier head is always dense.
    pub factored: bool,
}

/// Dense output layer `logits = W h_T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub(crate) w: Weight,
    pub(crate) b: Vec<f64>,
}

impl OutputLayer {
    pub fn new(w: Weight, b: Vec<f64>) -> Result<Self> {
        if w.shape().0 != b.len() {
            return Err(invalid_input("output bias length must match weight rows"));
        }
        Ok(Self { w, b })
    }

    pub fn weight(&self) -> &Weight {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }
}

/// Trainable tensors shared by [`Network`] and [`Gradients`].
#[derive(Debug, Clone, PartialEq)]
struct Params {
    gru: Vec<GruLayer>,
    out: OutputLayer,
}

impl Params {
    fn weights(&self) -> Vec<(String, &Weight)> {
        let mut out = Vec::new();
        for (i, layer) in self.gru.iter().enumerate() {
            for (name, w) in layer.group_names().iter().zip(&layer.groups) {
                out.push((format!("gru{i}.{name}"), w));
            }
        }
        out.push(("out".to_string(), &self.out.w));
        out
    }

    fn weights_mut(&mut self) -> Vec<&mut Weight> {
        let mut out: Vec<&mut Weight> = Vec::new();
        for layer in &mut self.gru {
            out.extend(layer.groups.iter_mut());
        }
        out.push(&mut self.out.w);
        out
    }

    /// Every stored tensor as a flat slice, in a fixed order.
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.gru {
            for w in &layer.groups {
                out.extend(w.tensors().into_iter().map(|t| t.as_slice()));
            }
            out.extend(layer.biases.iter().map(|b| b.as_slice()));
        }
        out.extend(self.out.w.tensors().into_iter().map(|t| t.as_slice()));
        out.push(&self.out.b);
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.gru {
            for w in &mut layer.groups {
                out.extend(w.tensors_mut().into_iter().map(|t| t.as_mut_slice()));
            }
            out.extend(layer.biases.iter_mut().map(|b| b.as_mut_slice()));
        }
        out.extend(self.out.w.tensors_mut().into_iter().map(|t| t.as_mut_slice()));
        out.push(&mut self.out.b);
        out
    }

    fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let mut push_weight = |prefix: String, w: &Weight| match w {
            Weight::Dense { w, .. } => out.push(NamedTensor::matrix(format!("{prefix}.w"), w)),
            Weight::Factored(f) => {
                out.push(NamedTensor::matrix(format!("{prefix}.u"), f.u()));
                out.push(NamedTensor::matrix(format!("{prefix}.v"), f.v()));
            }
        };
        for (i, layer) in self.gru.iter().enumerate() {
            for (name, w) in layer.group_names().iter().zip(&layer.groups) {
                push_weight(format!("gru{i}.{name}"), w);
            }
        }
        push_weight("out".into(), &self.out.w);
        for (i, layer) in self.gru.iter().enumerate() {
            for (gate, b) in ["b_z", "b_r", "b_h"].iter().zip(&layer.biases) {
                out.push(NamedTensor::vector(format!("gru{i}.{gate}"), b));
            }
        }
        out.push(NamedTensor::vector("out.b".into(), &self.out.b));
        out
    }

    fn zeros_like(&self) -> Params {
        let mut out = self.out.clone();
        for t in out.w.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
        out.b.fill(0.0);
        Params { gru: self.gru.iter().map(GruLayer::zeros_like).collect(), out }
    }
}

/// A named tensor of rank 0, 1 or 2, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn matrix(name: String, m: &Matrix) -> Self {
        Self { name, dims: vec![m.rows(), m.cols()], data: m.as_slice().to_vec() }
    }

    pub fn vector(name: String, v: &[f64]) -> Self {
        Self { name, dims: vec![v.len()], data: v.to_vec() }
    }

    pub fn scalar(name: String, x: f64) -> Self {
        Self { name, dims: vec![], data: vec![x] }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        match self.dims[..] {
            [r, c] => Matrix::new(r, c, self.data.clone()),
            _ => Err(invalid_input(format!("tensor {} is not a matrix", self.name))),
        }
    }

    fn to_vector(&self) -> Result<Vec<f64>> {
        match self.dims[..] {
            [_] => Ok(self.data.clone()),
            _ => Err(invalid_input(format!("tensor {} is not a vector", self.name))),
        }
    }
}

/// Stacked GRU layers plus a softmax classifier.
#[derive(Debug, PartialEq)]
pub struct Network {
    params: Params,
    id: u64,
    generation: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network { params: self.params.clone(), id: NEXT_ID.fetch_add(1, Ordering::Relaxed), generation: 0 }
    }
}

/// Gradients with the same layout as the network that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    params: Params,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.params.slices()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.params.slices_mut()
    }

    /// Gradient tensors of each weight group, in [`Network::weights`] order.
    pub fn weights(&self) -> Vec<(String, &Weight)> {
        self.params.weights()
    }

    pub fn weights_mut(&mut self) -> Vec<&mut Weight> {
        self.params.weights_mut()
    }

    pub fn sum_squares(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|x| x * x).sum()
    }
}

/// Activations recorded by [`Network::forward_loss`] for one batch.
pub struct ForwardCache {
    net_id: u64,
    generation: u64,
    gru: Vec<GruCache>,
    h_last: Matrix,
    out_inner: Option<Matrix>,
    probs: Matrix,
    labels: Vec<usize>,
    steps: usize,
}

impl ForwardCache {
    /// Softmax probabilities, `batch x classes`.
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }
}

fn uniform_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let s = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-s..s))
}

impl Network {
    fn wrap(params: Params) -> Self {
        Network { params, id: NEXT_ID.fetch_add(1, Ordering::Relaxed), generation: 0 }
    }

    /// Uniform(±1/√fan_in) weights and zero biases. Factored groups start as
    /// the balanced SVD split of the same dense draw.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Network> {
        if spec.n_in == 0 || spec.classes < 2 || spec.hidden.is_empty() || spec.hidden.contains(&0) {
            return Err(invalid_input("network needs n_in > 0, at least one hidden layer and two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let finish = |w: Weight| if spec.factored { w.into_full_rank_factored() } else { Ok(w) };
        let mut gru = Vec::with_capacity(spec.hidden.len());
        let mut n_in = spec.n_in;
        for &h in &spec.hidden {
            let dense: Vec<(Matrix, WeightKind)> = match spec.sharing {
                SharingScheme::PartiallyJoint => vec![
                    (uniform_matrix(3 * h, n_in, n_in, &mut rng), WeightKind::Nonrecurrent),
                    (uniform_matrix(3 * h, h, h, &mut rng), WeightKind::Recurrent),
                ],
                SharingScheme::CompletelySplit => {
                    let mut v: Vec<_> = (0..3)
                        .map(|_| (uniform_matrix(h, n_in, n_in, &mut rng), WeightKind::Nonrecurrent))
                        .collect();
                    v.extend((0..3).map(|_| (uniform_matrix(h, h, h, &mut rng), WeightKind::Recurrent)));
                    v
                }
                SharingScheme::CompletelyJoint => {
                    vec![(uniform_matrix(3 * h, n_in + h, n_in + h, &mut rng), WeightKind::Recurrent)]
                }
            };
            let groups = dense
                .into_iter()
                .map(|(m, k)| finish(Weight::dense(m, k)))
                .collect::<Result<Vec<_>>>()?;
            gru.push(GruLayer::from_groups(spec.sharing, groups, [vec![0.0; h], vec![0.0; h], vec![0.0; h]])?);
            n_in = h;
        }
        let out_w = Weight::dense(uniform_matrix(spec.classes, n_in, n_in, &mut rng), WeightKind::Nonrecurrent);
        Network::from_parts(gru, OutputLayer::new(out_w, vec![0.0; spec.classes])?)
    }

    pub fn from_parts(gru: Vec<GruLayer>, out: OutputLayer) -> Result<Network> {
        let first = gru.first().ok_or_else(|| invalid_input("network needs at least one GRU layer"))?;
        let mut width = first.n_h();
        for layer in &gru[1..] {
            if layer.n_in() != width {
                return Err(invalid_input(format!("layer expects {} inputs, previous layer emits {width}", layer.n_in())));
            }
            width = layer.n_h();
        }
        if out.w.shape().1 != width {
            return Err(invalid_input("output layer width does not match last hidden size"));
        }
        if out.w.kind() != WeightKind::Nonrecurrent {
            return Err(invalid_input("output weight must be nonrecurrent"));
        }
        Ok(Network::wrap(Params { gru, out }))
    }

    pub fn n_in(&self) -> usize {
        self.params.gru[0].n_in()
    }

    pub fn classes(&self) -> usize {
        self.params.out.b.len()
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.params.gru.iter().map(GruLayer::n_h).collect()
    }

    pub fn sharing(&self) -> SharingScheme {
        self.params.gru[0].scheme()
    }

    pub fn gru_layers(&self) -> &[GruLayer] {
        &self.params.gru
    }

    pub fn output(&self) -> &OutputLayer {
        &self.params.out
    }

    /// Named weight groups (`gru0.nonrec`, `gru0.rec`, ..., `out`).
    pub fn weights(&self) -> Vec<(String, &Weight)> {
        self.params.weights()
    }

    /// The GRU weight groups only, i.e. [`Network::weights`] without `out`.
    pub fn gru_weights(&self) -> Vec<(String, &Weight)> {
        let mut w = self.params.weights();
        w.pop();
        w
    }

    pub fn is_factored(&self) -> bool {
        self.gru_weights().iter().all(|(_, w)| w.is_factored())
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let mut out = Vec::new();
        for layer in &self.params.gru {
            out.extend(layer.groups().iter().map(Weight::param_shape));
            out.extend(layer.biases().iter().map(|b| ParamShape::Bias(b.len())));
        }
        out.push(self.params.out.w.param_shape());
        out.push(ParamShape::Bias(self.params.out.b.len()));
        out
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.param_shapes())
    }

    /// Rebuilds the network with every weight group replaced by `f(name, weight)`.
    pub fn map_weights(&self, mut f: impl FnMut(&str, &Weight) -> Result<Weight>) -> Result<Network> {
        let names: Vec<String> = self.weights().into_iter().map(|(n, _)| n).collect();
        let mut params = self.params.clone();
        for (name, w) in names.iter().zip(params.weights_mut()) {
            let replaced = f(name, w)?;
            if replaced.shape() != w.shape() || replaced.kind() != w.kind() {
                return Err(invalid_input(format!("replacement for {name} changes shape or kind")));
            }
            *w = replaced;
        }
        Ok(Network::wrap(params))
    }

    /// Mutable access to every trainable tensor (same order as [`Gradients::slices`]).
    /// Invalidates outstanding forward caches.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.params.slices_mut()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.params.slices()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients { params: self.params.zeros_like() }
    }

    pub fn forward_loss(&self, batch: &Batch) -> Result<(f64, ForwardCache)> {
        let n_in = self.n_in();
        if batch.xs.is_empty() || batch.labels.is_empty() {
            return Err(invalid_input("empty batch"));
        }
        let b = batch.labels.len();
        if batch.xs.iter().any(|x| x.shape() != (b, n_in)) {
            return Err(invalid_input(format!("every step must be {b}x{n_in}")));
        }
        let classes = self.classes();
        if let Some(&l) = batch.labels.iter().find(|&&l| l >= classes) {
            return Err(invalid_input(format!("label {l} out of range for {classes} classes")));
        }

        let mut caches = Vec::with_capacity(self.params.gru.len());
        let mut hs: Option<Vec<Matrix>> = None;
        for layer in &self.params.gru {
            let inputs = hs.as_deref().unwrap_or(&batch.xs);
            let h0 = Matrix::zeros(b, layer.n_h());
            let (next, cache) = layer.forward(inputs, &h0);
            caches.push(cache);
            hs = Some(next);
        }
        let h_last = hs.and_then(|mut v| v.pop()).expect("nonempty sequence");
        let applied = apply(&self.params.out.w, &h_last);
        let out_inner = applied.inner;
        let mut probs = applied.out;
        let mut loss = 0.0;
        for (i, &label) in batch.labels.iter().enumerate() {
            let row = probs.row_mut(i);
            for (x, bias) in row.iter_mut().zip(&self.params.out.b) {
                *x += bias;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - row[label];
            for x in row.iter_mut() {
                *x = (*x - log_z).exp();
            }
        }
        loss /= b as f64;
        let cache = ForwardCache {
            net_id: self.id,
            generation: self.generation,
            gru: caches,
            h_last,
            out_inner,
            probs,
            labels: batch.labels.clone(),
            steps: batch.xs.len(),
        };
        Ok((loss, cache))
    }

    /// Mean cross-entropy without keeping activations.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.forward_loss(batch).map(|(l, _)| l)
    }

    /// Exact gradients of the mean cross-entropy recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache) -> Result<Gradients> {
        if cache.net_id != self.id || cache.generation != self.generation {
            return Err(Error::InvalidState("forward cache does not belong to this network state".into()));
        }
        let b = cache.labels.len();
        let mut grads = self.zero_gradients();
        let mut dlogits = cache.probs.clone();
        for (i, &label) in cache.labels.iter().enumerate() {
            let row = dlogits.row_mut(i);
            row[label] -= 1.0;
            for x in row.iter_mut() {
                *x /= b as f64;
            }
            for (g, d) in grads.params.out.b.iter_mut().zip(row.iter()) {
                *g += d;
            }
        }
        let dh_last = apply_backward(
            &self.params.out.w,
            &cache.h_last,
            cache.out_inner.as_ref(),
            &dlogits,
            &mut grads.params.out.w,
        );

        let mut dhs: Vec<Matrix> = Vec::with_capacity(cache.steps);
        let top = self.params.gru.last().expect("at least one layer");
        for _ in 0..cache.steps - 1 {
            dhs.push(Matrix::zeros(b, top.n_h()));
        }
        dhs.push(dh_last);
        for (l, layer) in self.params.gru.iter().enumerate().rev() {
            dhs = layer.backward(&cache.gru[l], &dhs, &mut grads.params.gru[l]);
        }
        Ok(grads)
    }

    /// Checkpointable tensors: weight groups (`<group>.w` or `<group>.u`,
    /// `<group>.v`) followed by biases.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        self.params.tensors()
    }

    /// Inverse of [`Network::named_tensors`].
    pub fn from_named_tensors(sharing: SharingScheme, tensors: &[NamedTensor]) -> Result<Network> {
        let by_name: BTreeMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let get = |name: &str| -> Result<&NamedTensor> {
            by_name.get(name).copied().ok_or_else(|| invalid_input(format!("missing tensor {name}")))
        };
        let weight = |prefix: &str, kind: WeightKind| -> Result<Weight> {
            if let Some(w) = by_name.get(format!("{prefix}.w").as_str()) {
                return Ok(Weight::dense(w.to_matrix()?, kind));
            }
            let u = get(&format!("{prefix}.u"))?.to_matrix()?;
            let v = get(&format!("{prefix}.v"))?.to_matrix()?;
            Ok(Weight::Factored(FactoredLayer::new(u, v, kind)?))
        };
        let names: &[(&str, WeightKind)] = match sharing {
            SharingScheme::PartiallyJoint => &[("nonrec", WeightKind::Nonrecurrent), ("rec", WeightKind::Recurrent)],
            SharingScheme::CompletelySplit => &[
                ("w_z", WeightKind::Nonrecurrent),
                ("w_r", WeightKind::Nonrecurrent),
                ("w_h", WeightKind::Nonrecurrent),
                ("u_z", WeightKind::Recurrent),
                ("u_r", WeightKind::Recurrent),
                ("u_h", WeightKind::Recurrent),
            ],
            SharingScheme::CompletelyJoint => &[("joint", WeightKind::Recurrent)],
        };
        let mut gru = Vec::new();
        for i in 0.. {
            if !by_name.contains_key(format!("gru{i}.b_z").as_str()) {
                break;
            }
            let groups = names
                .iter()
                .map(|(n, k)| weight(&format!("gru{i}.{n}"), *k))
                .collect::<Result<Vec<_>>>()?;
            let biases = [
                get(&format!("gru{i}.b_z"))?.to_vector()?,
                get(&format!("gru{i}.b_r"))?.to_vector()?,
                get(&format!("gru{i}.b_h"))?.to_vector()?,
            ];
            gru.push(GruLayer::from_groups(sharing, groups, biases)?);
        }
        let out = OutputLayer::new(weight("out", WeightKind::Nonrecurrent)?, get("out.b")?.to_vector()?)?;
        Network::from_parts(gru, out)
    }
}
