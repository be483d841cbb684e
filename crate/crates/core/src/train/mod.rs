//! Two-stage training.
//!
//! Stage 1 trains full-rank factored GRU weights `W = UV` under the
//! variational trace norm penalty `½λ(‖U‖_F² + ‖V‖_F²)`, with separate
//! strengths for recurrent and nonrecurrent groups. Stage 2 replaces every
//! GRU weight by a truncated-SVD warmstart and fine-tunes without
//! regularization. The classifier head is never regularized or truncated.

mod experiments;

pub use experiments::{
    lambda_sweep, random_low_rank_like, select_threshold, spearman_rho, train_stage2, transition_experiment,
    truncated_parameter_count, SweepRow, SweepStatus, SweepTable, TransitionEvent,
};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid_config, Error, Result};
use crate::linalg::{nondim_trace_norm_coeff, rank_for_variance, singular_values};
use crate::lowrank::{Weight, WeightKind};
use crate::rnn::{Dataset, Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegMode {
    TraceNorm,
    L2,
    None,
}

impl RegMode {
    pub fn name(&self) -> &'static str {
        match self {
            RegMode::TraceNorm => "trace_norm",
            RegMode::L2 => "l2",
            RegMode::None => "none",
        }
    }
}

impl fmt::Display for RegMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace_norm" | "tracenorm" | "tn" => Ok(RegMode::TraceNorm),
            "l2" => Ok(RegMode::L2),
            "none" => Ok(RegMode::None),
            _ => Err(invalid_config(format!("unknown regularization mode {s:?}"))),
        }
    }
}

/// Regularization strengths, applied per weight kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegConfig {
    pub mode: RegMode,
    pub lambda_rec: f64,
    pub lambda_nonrec: f64,
}

impl RegConfig {
    pub fn none() -> Self {
        Self { mode: RegMode::None, lambda_rec: 0.0, lambda_nonrec: 0.0 }
    }

    pub fn trace_norm(lambda_rec: f64, lambda_nonrec: f64) -> Self {
        Self { mode: RegMode::TraceNorm, lambda_rec, lambda_nonrec }
    }

    pub fn l2(lambda_rec: f64, lambda_nonrec: f64) -> Self {
        Self { mode: RegMode::L2, lambda_rec, lambda_nonrec }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda_rec", self.lambda_rec), ("lambda_nonrec", self.lambda_nonrec)] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(invalid_config(format!("{name} must be finite and nonnegative, got {l}")));
            }
        }
        Ok(())
    }

    /// Effective strength for a weight of the given kind (0 in `None` mode).
    pub fn lambda(&self, kind: WeightKind) -> f64 {
        match (self.mode, kind) {
            (RegMode::None, _) => 0.0,
            (_, WeightKind::Recurrent) => self.lambda_rec,
            (_, WeightKind::Nonrecurrent) => self.lambda_nonrec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage2LrRule {
    /// Restart at three times the final stage-1 rate.
    ThreeTimesFinal,
    /// Keep following the stage-1 schedule.
    CarryOver,
}

impl FromStr for Stage2LrRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three_times_final" => Ok(Stage2LrRule::ThreeTimesFinal),
            "carry_over" => Ok(Stage2LrRule::CarryOver),
            _ => Err(invalid_config(format!("unknown stage-2 learning rate rule {s:?}"))),
        }
    }
}

impl fmt::Display for Stage2LrRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage2LrRule::ThreeTimesFinal => "three_times_final",
            Stage2LrRule::CarryOver => "carry_over",
        })
    }
}

/// Epoch budget and learning-rate schedule. Epochs are numbered from 1;
/// epochs `1..=transition_epoch` are stage 1, the rest stage 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub total_epochs: usize,
    pub transition_epoch: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub stage2_lr_rule: Stage2LrRule,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { total_epochs: 40, transition_epoch: 40, lr0: 0.05, lr_decay: 0.95, stage2_lr_rule: Stage2LrRule::CarryOver }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(invalid_config("total_epochs must be positive"));
        }
        if self.transition_epoch > self.total_epochs {
            return Err(invalid_config(format!(
                "transition_epoch {} outside [0, {}]",
                self.transition_epoch, self.total_epochs
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(invalid_config("lr0 must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid_config("lr_decay must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Stage-1 learning rate of (1-based) epoch `e`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch.saturating_sub(1) as i32)
    }

    /// Learning rate of stage-2 epoch `e > transition_epoch`.
    pub fn stage2_lr_at(&self, epoch: usize) -> f64 {
        let k = epoch - self.transition_epoch;
        match self.stage2_lr_rule {
            Stage2LrRule::CarryOver => self.lr_at(epoch),
            Stage2LrRule::ThreeTimesFinal => {
                3.0 * self.lr_at(self.transition_epoch) * self.lr_decay.powi(k as i32 - 1)
            }
        }
    }

    pub fn stage2_epochs(&self) -> usize {
        self.total_epochs - self.transition_epoch
    }
}

/// Optimizer and loop settings shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub momentum: f64,
    /// Rescale the full gradient to at most this norm.
    pub clip_norm: Option<f64>,
    /// Divergence when a loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { batch_size: 32, momentum: 0.9, clip_norm: Some(5.0), divergence_factor: 1e3 }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid_config("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid_config("momentum must lie in [0, 1)"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(invalid_config("clip_norm must be positive"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(invalid_config("divergence_factor must exceed 1"));
        }
        Ok(())
    }
}

/// Training and validation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
}

/// Metrics after one completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// 1 or 2.
    pub stage: u8,
    /// Mean minibatch data loss during the epoch.
    pub train_loss: f64,
    /// Mean minibatch data loss plus penalty during the epoch.
    pub train_objective: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// ν of every GRU weight group, in [`RunRecord::layers`] order.
    pub nu: Vec<f64>,
    /// Rank reaching 90% of the squared spectrum, same order.
    pub rank90: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub layers: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub transition: Option<TransitionEvent>,
}

impl RunRecord {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Penalty term alone: `Σ ½λ(‖U‖² + ‖V‖²)` (trace norm) or `Σ ½λ‖W‖²` (L2).
pub fn penalty<'a>(layers: impl IntoIterator<Item = &'a Weight>, cfg: &RegConfig) -> Result<f64> {
    cfg.validate()?;
    let mut total = 0.0;
    for w in layers {
        let lambda = cfg.lambda(w.kind());
        match (cfg.mode, w) {
            (RegMode::None, _) => {}
            (RegMode::TraceNorm, Weight::Factored(f)) => {
                total += 0.5 * lambda * (f.u().sum_squares() + f.v().sum_squares());
            }
            (RegMode::TraceNorm, Weight::Dense { .. }) => {
                return Err(invalid_config("trace norm regularization needs factored layers"));
            }
            (RegMode::L2, Weight::Dense { w, .. }) => total += 0.5 * lambda * w.sum_squares(),
            (RegMode::L2, Weight::Factored(_)) => {
                return Err(invalid_config("L2 regularization applies to unfactored layers"));
            }
        }
    }
    Ok(total)
}

/// `data_loss` plus [`penalty`].
pub fn regularized_loss<'a>(data_loss: f64, layers: impl IntoIterator<Item = &'a Weight>, cfg: &RegConfig) -> Result<f64> {
    Ok(data_loss + penalty(layers, cfg)?)
}

/// Network-level penalty over the GRU groups.
pub fn network_penalty(net: &Network, cfg: &RegConfig) -> Result<f64> {
    penalty(net.gru_weights().into_iter().map(|(_, w)| w), cfg)
}

/// Adds `λ·U`, `λ·V` (or `λ·W`) to the GRU group gradients.
pub fn add_penalty_gradient(net: &Network, cfg: &RegConfig, grads: &mut Gradients) -> Result<()> {
    // validates mode/layer compatibility
    network_penalty(net, cfg)?;
    if cfg.mode == RegMode::None {
        return Ok(());
    }
    let weights = net.gru_weights();
    for ((_, w), g) in weights.iter().zip(grads.weights_mut()) {
        let lambda = cfg.lambda(w.kind());
        if lambda == 0.0 {
            continue;
        }
        for (t, gt) in w.tensors().into_iter().zip(g.tensors_mut()) {
            for (gi, ti) in gt.as_mut_slice().iter_mut().zip(t.as_slice()) {
                *gi += lambda * ti;
            }
        }
    }
    Ok(())
}

/// ν and rank at 90% variance of every GRU group's recovered matrix.
pub fn layer_stats(net: &Network) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut nu = Vec::new();
    let mut rank = Vec::new();
    for (_, w) in net.gru_weights() {
        let sigma = singular_values(&w.recover())?;
        if sigma.iter().all(|&s| s == 0.0) {
            nu.push(0.0);
            rank.push(0);
            continue;
        }
        nu.push(nondim_trace_norm_coeff(&sigma)?);
        rank.push(rank_for_variance(&sigma, 0.9)?);
    }
    Ok((nu, rank))
}

fn layer_names(net: &Network) -> Vec<String> {
    net.gru_weights().into_iter().map(|(n, _)| n).collect()
}

/// Shuffling stream for a run; independent of the initialization stream.
pub(crate) fn shuffle_rng(seed: u64, stage: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(stage));
    rng
}

/// One stage of SGD with momentum over the epochs `epochs`, with
/// `lr(epoch)` giving the rate. Appends one [`EpochRecord`] per epoch.
pub(crate) struct StageRun<'a> {
    pub splits: &'a Splits,
    pub reg: RegConfig,
    pub opts: TrainOptions,
    pub stage: u8,
    pub seed: u64,
}

impl StageRun<'_> {
    pub(crate) fn run(
        &self,
        net: &mut Network,
        epochs: std::ops::RangeInclusive<usize>,
        lr: impl Fn(usize) -> f64,
        record: &mut RunRecord,
    ) -> Result<()> {
        self.reg.validate()?;
        self.opts.validate()?;
        network_penalty(net, &self.reg)?;
        if epochs.is_empty() {
            return Ok(());
        }
        let train = &self.splits.train;
        let initial = net.loss(&train.full_batch())?;
        let limit = self.opts.divergence_factor * initial.max(f64::MIN_POSITIVE);
        let mut rng = shuffle_rng(self.seed, self.stage);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut velocity = net.zero_gradients();
        for epoch in epochs {
            let rate = lr(epoch);
            order.shuffle(&mut rng);
            let mut sum_loss = 0.0;
            let mut sum_obj = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(self.opts.batch_size) {
                let batch = train.batch(chunk);
                let (loss, cache) = net.forward_loss(&batch)?;
                let pen = network_penalty(net, &self.reg)?;
                if !loss.is_finite() || !pen.is_finite() || loss > limit {
                    return Err(Error::Diverged { epoch, loss });
                }
                sum_loss += loss;
                sum_obj += loss + pen;
                batches += 1;
                let mut grads = net.backward(&cache)?;
                add_penalty_gradient(net, &self.reg, &mut grads)?;
                let mut scale = 1.0;
                if let Some(c) = self.opts.clip_norm {
                    let norm = grads.sum_squares().sqrt();
                    if !norm.is_finite() {
                        return Err(Error::Diverged { epoch, loss: norm });
                    }
                    if norm > c {
                        scale = c / norm;
                    }
                }
                let mu = self.opts.momentum;
                for ((p, v), g) in net.slices_mut().into_iter().zip(velocity.slices_mut()).zip(grads.slices()) {
                    for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = mu * *vi - rate * scale * gi;
                        *pi += *vi;
                    }
                }
            }
            let val_loss = net.loss(&self.splits.val.full_batch())?;
            if !val_loss.is_finite() {
                return Err(Error::Diverged { epoch, loss: val_loss });
            }
            let (nu, rank90) = layer_stats(net)?;
            record.epochs.push(EpochRecord {
                epoch,
                stage: self.stage,
                train_loss: sum_loss / batches as f64,
                train_objective: sum_obj / batches as f64,
                val_loss,
                lr: rate,
                nu,
                rank90,
                params: net.parameter_count(),
            });
        }
        Ok(())
    }
}

/// Stage 1: `schedule.transition_epoch` epochs with the regularized loss.
/// Trace-norm mode needs factored GRU weights; L2 and `None` need dense ones.
pub fn train_stage1(
    mut net: Network,
    splits: &Splits,
    reg: &RegConfig,
    schedule: &Schedule,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(Network, RunRecord)> {
    schedule.validate()?;
    let factored = net.is_factored();
    match reg.mode {
        RegMode::TraceNorm if !factored => {
            return Err(invalid_config("trace norm stage 1 needs full-rank factored GRU weights"))
        }
        RegMode::L2 | RegMode::None if net.gru_weights().iter().any(|(_, w)| w.is_factored()) => {
            return Err(invalid_config("L2 and unregularized stage 1 train unfactored GRU weights"))
        }
        _ => {}
    }
    let mut record = RunRecord { layers: layer_names(&net), ..RunRecord::default() };
    let run = StageRun { splits, reg: *reg, opts: *opts, stage: 1, seed };
    run.run(&mut net, 1..=schedule.transition_epoch, |e| schedule.lr_at(e), &mut record)?;
    Ok((net, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::lowrank::FactoredLayer;

    #[test]
    fn regularized_loss_examples() {
        let id = Matrix::identity(2);
        let f = Weight::Factored(FactoredLayer::new(id.clone(), id.clone(), WeightKind::Nonrecurrent).unwrap());
        let zero = RegConfig::trace_norm(0.0, 0.0);
        assert_eq!(regularized_loss(1.25, [&f], &zero).unwrap(), 1.25);
        let cfg = RegConfig::trace_norm(0.0, 2.0);
        assert_eq!(regularized_loss(0.0, [&f], &cfg).unwrap(), 4.0);
        let rec = RegConfig::trace_norm(2.0, 0.0);
        assert_eq!(regularized_loss(0.0, [&f], &rec).unwrap(), 0.0);

        let w = Weight::dense(Matrix::from_rows(&[&[3.0, 4.0]]).unwrap(), WeightKind::Recurrent);
        assert_eq!(regularized_loss(0.0, [&w], &RegConfig::l2(1.0, 0.0)).unwrap(), 12.5);
        assert_eq!(regularized_loss(0.5, [&w], &RegConfig { mode: RegMode::None, lambda_rec: 9.0, lambda_nonrec: 9.0 }).unwrap(), 0.5);

        assert!(matches!(regularized_loss(0.0, [&w], &cfg), Err(Error::InvalidConfig(_))));
        assert!(matches!(regularized_loss(0.0, [&f], &RegConfig::l2(1.0, 1.0)), Err(Error::InvalidConfig(_))));
        assert!(regularized_loss(0.0, [&f], &RegConfig::trace_norm(-1.0, 0.0)).is_err());
    }

    #[test]
    fn schedule_rates() {
        let s = Schedule { total_epochs: 10, transition_epoch: 4, lr0: 0.1, lr_decay: 0.5, stage2_lr_rule: Stage2LrRule::CarryOver };
        assert_eq!(s.lr_at(1), 0.1);
        assert_eq!(s.lr_at(3), 0.025);
        assert_eq!(s.stage2_lr_at(5), s.lr_at(5));
        let t = Schedule { stage2_lr_rule: Stage2LrRule::ThreeTimesFinal, ..s };
        assert!((t.stage2_lr_at(5) - 3.0 * 0.0125).abs() < 1e-15);
        assert!((t.stage2_lr_at(6) - 1.5 * 0.0125).abs() < 1e-15);
        assert_eq!(s.stage2_epochs(), 6);
        assert!(Schedule { transition_epoch: 11, ..s }.validate().is_err());
        assert!(Schedule { lr_decay: 0.0, ..s }.validate().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [RegMode::TraceNorm, RegMode::L2, RegMode::None] {
            assert_eq!(m.name().parse::<RegMode>().unwrap(), m);
        }
        for r in [Stage2LrRule::CarryOver, Stage2LrRule::ThreeTimesFinal] {
            assert_eq!(r.to_string().parse::<Stage2LrRule>().unwrap(), r);
        }
        assert!("ridge".parse::<RegMode>().is_err());
    }
}
