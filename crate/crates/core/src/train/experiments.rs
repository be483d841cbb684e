//! Stage 2, the transition-epoch experiment and regularization sweeps.

use super::{layer_names, train_stage1, RegConfig, RegMode, RunRecord, Schedule, Splits, StageRun, TrainOptions};
use crate::error::{invalid_config, invalid_input, Error, Result};
use crate::linalg::{rank_for_variance, singular_values};
use crate::lowrank::{Truncation, Weight};
use crate::rnn::{Network, NetworkSpec};

/// What happened at the stage-1 to stage-2 switch.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEvent {
    /// Last stage-1 epoch.
    pub epoch: usize,
    /// Variance threshold used, if truncation was threshold based.
    pub threshold: Option<f64>,
    pub val_before: f64,
    /// Validation loss of the truncated model before any stage-2 update.
    pub val_after: f64,
    pub params_before: usize,
    pub params_after: usize,
}

impl TransitionEvent {
    pub fn jump(&self) -> f64 {
        self.val_after - self.val_before
    }
}

/// Replaces every GRU weight group by the factored warmstart of its
/// recovered matrix. The classifier head is left untouched.
pub fn truncate_network(net: &Network, truncation: Truncation) -> Result<Network> {
    net.map_weights(|name, w| if name == "out" { Ok(w.clone()) } else { w.truncated(truncation) })
}

/// Stage 2: truncate, then train epochs `transition_epoch + 1 ..= total_epochs`
/// without regularization, with the learning rate from
/// `schedule.stage2_lr_rule`.
pub fn train_stage2(
    stage1: &Network,
    splits: &Splits,
    truncation: Truncation,
    schedule: &Schedule,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(Network, RunRecord)> {
    schedule.validate()?;
    if let Truncation::Threshold(t) = truncation {
        if !(t > 0.0 && t <= 1.0) {
            return Err(invalid_input(format!("threshold {t} outside (0, 1]")));
        }
    }
    let mut net = truncate_network(stage1, truncation)?;
    let val = splits.val.full_batch();
    let event = TransitionEvent {
        epoch: schedule.transition_epoch,
        threshold: match truncation {
            Truncation::Threshold(t) => Some(t),
            Truncation::Rank(_) => None,
        },
        val_before: stage1.loss(&val)?,
        val_after: net.loss(&val)?,
        params_before: stage1.parameter_count(),
        params_after: net.parameter_count(),
    };
    let mut record = RunRecord { layers: layer_names(&net), transition: Some(event), ..RunRecord::default() };
    let run = StageRun { splits, reg: RegConfig::none(), opts: *opts, stage: 2, seed };
    run.run(
        &mut net,
        schedule.transition_epoch + 1..=schedule.total_epochs,
        |e| schedule.stage2_lr_at(e),
        &mut record,
    )?;
    Ok((net, record))
}

fn group_spectra(net: &Network) -> Result<Vec<Vec<f64>>> {
    net.gru_weights().iter().map(|(_, w)| singular_values(&w.recover())).collect()
}

/// Parameter count after truncating every GRU group at `threshold`.
pub fn truncated_parameter_count(net: &Network, threshold: f64) -> Result<usize> {
    count_with(net, &group_spectra(net)?, threshold)
}

fn count_with(net: &Network, spectra: &[Vec<f64>], threshold: f64) -> Result<usize> {
    let mut count = net.parameter_count();
    for ((_, w), sigma) in net.gru_weights().iter().zip(spectra) {
        let (m, n) = w.shape();
        count = count - w.parameter_count() + rank_for_variance(sigma, threshold)? * (m + n);
    }
    Ok(count)
}

/// Largest variance threshold whose truncation keeps at most `target`
/// parameters, with the resulting count. Only thresholds at which some
/// group's rank changes are candidates, so the search is exact.
pub fn select_threshold(net: &Network, target: usize) -> Result<(f64, usize)> {
    let spectra = group_spectra(net)?;
    let mut candidates = vec![1.0];
    for sigma in &spectra {
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        let mut acc = 0.0;
        for s in sigma {
            acc += s * s;
            let t = acc / total;
            if t > 0.0 && t < 1.0 {
                candidates.push(t);
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let counts = |i: usize| count_with(net, &spectra, candidates[i]);
    if counts(0)? > target {
        return Err(invalid_config(format!("no truncation reaches {target} parameters")));
    }
    // counts are nondecreasing in the threshold
    let (mut lo, mut hi) = (0, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if counts(mid)? <= target {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok((candidates[lo], counts(lo)?))
}

/// Fewest parameters any truncation can reach: rank 1 everywhere.
fn minimum_parameter_count(net: &Network) -> usize {
    let mut count = net.parameter_count();
    for (_, w) in net.gru_weights() {
        let (m, n) = w.shape();
        count = count - w.parameter_count() + m + n;
    }
    count
}

fn spec_of(net: &Network, factored: bool) -> NetworkSpec {
    NetworkSpec { n_in: net.n_in(), hidden: net.hidden(), classes: net.classes(), sharing: net.sharing(), factored }
}

/// A freshly initialized network whose GRU groups have the same ranks as
/// `net`'s (leading SVD components of a new random draw).
pub fn random_low_rank_like(net: &Network, seed: u64) -> Result<Network> {
    let fresh = Network::init(&spec_of(net, false), seed)?;
    let ranks: Vec<Option<usize>> = net
        .weights()
        .into_iter()
        .map(|(_, w)| match w {
            Weight::Factored(f) => Some(f.rank()),
            Weight::Dense { .. } => None,
        })
        .collect();
    let mut i = 0;
    fresh.map_weights(|_, w| {
        let r = ranks[i];
        i += 1;
        match r {
            Some(r) => w.truncated(Truncation::Rank(r)),
            None => Ok(w.clone()),
        }
    })
}

/// Stage 1 for `transition_epoch` epochs, then the largest-threshold
/// truncation within `target_params`, then stage 2 up to `total_epochs` with
/// the learning rate carried over. Trace-norm runs train factored weights,
/// other modes dense ones.
pub fn transition_experiment(
    spec: &NetworkSpec,
    splits: &Splits,
    reg: &RegConfig,
    schedule: &Schedule,
    target_params: usize,
    opts: &TrainOptions,
    seed: u64,
) -> Result<RunRecord> {
    let schedule = Schedule { stage2_lr_rule: super::Stage2LrRule::CarryOver, ..*schedule };
    schedule.validate()?;
    let net = Network::init(&NetworkSpec { factored: reg.mode == RegMode::TraceNorm, ..spec.clone() }, seed)?;
    if minimum_parameter_count(&net) > target_params {
        return Err(invalid_config(format!("parameter target {target_params} is below any rank-1 truncation")));
    }
    let (net, mut record) = train_stage1(net, splits, reg, &schedule, opts, seed)?;
    if schedule.stage2_epochs() == 0 {
        return Ok(record);
    }
    let (threshold, _) = select_threshold(&net, target_params)?;
    let (_, stage2) = train_stage2(&net, splits, Truncation::Threshold(threshold), &schedule, opts, seed)?;
    record.epochs.extend(stage2.epochs);
    record.transition = stage2.transition;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepStatus {
    Ok,
    Diverged { epoch: usize },
}

/// Final metrics of one `(grid point, seed)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: RegMode,
    pub lambda_rec: f64,
    pub lambda_nonrec: f64,
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub nu: Vec<f64>,
    pub rank90: Vec<usize>,
    pub params: usize,
    pub status: SweepStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub layers: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// Stage-1 runs of `schedule.total_epochs` epochs for every
/// `(λ_rec, λ_nonrec)` in `grid` and every seed, in grid-major order. A run's
/// randomness depends only on its seed, so repeated grid points reproduce.
/// Diverged runs become rows with `NaN` metrics.
pub fn lambda_sweep(
    spec: &NetworkSpec,
    splits: &Splits,
    mode: RegMode,
    grid: &[(f64, f64)],
    seeds: &[u64],
    schedule: &Schedule,
    opts: &TrainOptions,
) -> Result<SweepTable> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(invalid_config("sweep needs a nonempty grid and at least one seed"));
    }
    let schedule = Schedule { transition_epoch: schedule.total_epochs, ..*schedule };
    let spec = NetworkSpec { factored: mode == RegMode::TraceNorm, ..spec.clone() };
    let mut layers = Vec::new();
    let mut rows = Vec::with_capacity(grid.len() * seeds.len());
    for &(lambda_rec, lambda_nonrec) in grid {
        let reg = RegConfig { mode, lambda_rec, lambda_nonrec };
        reg.validate()?;
        for &seed in seeds {
            let net = Network::init(&spec, seed)?;
            layers = layer_names(&net);
            let params = net.parameter_count();
            let row = match train_stage1(net, splits, &reg, &schedule, opts, seed) {
                Ok((net, record)) => {
                    let last = record.last().expect("positive epoch budget");
                    SweepRow {
                        mode,
                        lambda_rec,
                        lambda_nonrec,
                        seed,
                        final_train_loss: last.train_loss,
                        final_val_loss: last.val_loss,
                        nu: last.nu.clone(),
                        rank90: last.rank90.clone(),
                        params: net.parameter_count(),
                        status: SweepStatus::Ok,
                    }
                }
                Err(Error::Diverged { epoch, .. }) => SweepRow {
                    mode,
                    lambda_rec,
                    lambda_nonrec,
                    seed,
                    final_train_loss: f64::NAN,
                    final_val_loss: f64::NAN,
                    nu: vec![f64::NAN; layers.len()],
                    rank90: vec![0; layers.len()],
                    params,
                    status: SweepStatus::Diverged { epoch },
                },
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    Ok(SweepTable { layers, rows })
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = mean;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with tie correction.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid_input("need two equally long samples of at least 2 points"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(invalid_input("NaN in rank correlation input"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(invalid_input("rank correlation undefined for a constant sample"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[9.0, 5.0, 4.0, 1.0]).unwrap(), -1.0);
        // classic textbook case without ties: 1 - 6Σd²/(n(n²-1))
        let x = [106.0, 86.0, 100.0, 101.0, 99.0, 103.0, 97.0, 113.0, 112.0, 110.0];
        let y = [7.0, 0.0, 27.0, 50.0, 28.0, 29.0, 20.0, 12.0, 6.0, 17.0];
        let rx = ranks(&x);
        let ry = ranks(&y);
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        let expected = 1.0 - 6.0 * d2 / (10.0 * 99.0);
        assert!((spearman_rho(&x, &y).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 0.175757575).abs() < 1e-8);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
