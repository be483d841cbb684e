//! Subcommand implementations. Each writes one CSV into the output directory
//! and returns its path.

use std::path::{Path, PathBuf};

use tracenorm_core::qgemm::benchmark;
use tracenorm_core::train::{
    lambda_sweep, train_stage1, train_stage2, transition_experiment, RegConfig, Schedule,
};
use tracenorm_core::{Network, Truncation};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::ExperimentConfig;
use crate::csv::{bench_csv, stage2_csv, sweep_csv, train_csv, transition_rows, Stage2Row, TRANSITION_HEADER};
use crate::error::CliError;

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let io = |path: &Path, source| CliError::Io { path: path.display().to_string(), source };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| io(&path, e))?;
    Ok(path)
}

/// `sweep.csv`: one stage-1 run per `(λ_rec, λ_nonrec, seed)`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let splits = cfg.splits()?;
    let grid: Vec<(f64, f64)> = cfg
        .sweep
        .lambda_rec
        .iter()
        .flat_map(|&r| cfg.sweep.lambda_nonrec.iter().map(move |&n| (r, n)))
        .collect();
    let table =
        lambda_sweep(&cfg.network_spec(), &splits, cfg.reg.mode, &grid, &cfg.sweep.seeds, &cfg.schedule, &cfg.opts)?;
    write_output(&cfg.out, "sweep.csv", &sweep_csv(&table))
}

fn stage1_meta(cfg: &ExperimentConfig, epochs: usize) -> CheckpointMeta {
    CheckpointMeta { epoch: epochs, lr: cfg.schedule.lr_at(epochs), reg: cfg.reg, sharing: cfg.sharing }
}

/// `train.csv` plus `stage1.ckpt` (and `final.ckpt` when a stage-2 budget
/// remains): stage 1 to `train.transition_epoch`, then stage 2 at
/// `train.threshold`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let splits = cfg.splits()?;
    let net = Network::init(&cfg.network_spec(), cfg.seed)?;
    let (net, mut record) = train_stage1(net, &splits, &cfg.reg, &cfg.schedule, &cfg.opts, cfg.seed)?;
    let te = cfg.schedule.transition_epoch;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Io { path: cfg.out.display().to_string(), source: e })?;
    save_checkpoint(&cfg.out.join("stage1.ckpt"), &net, &stage1_meta(cfg, te))?;
    if cfg.schedule.stage2_epochs() > 0 {
        let (net, stage2) =
            train_stage2(&net, &splits, Truncation::Threshold(cfg.threshold), &cfg.schedule, &cfg.opts, cfg.seed)?;
        record.epochs.extend(stage2.epochs);
        record.transition = stage2.transition;
        let total = cfg.schedule.total_epochs;
        let meta = CheckpointMeta {
            epoch: total,
            lr: cfg.schedule.stage2_lr_at(total),
            reg: RegConfig::none(),
            sharing: cfg.sharing,
        };
        save_checkpoint(&cfg.out.join("final.ckpt"), &net, &meta)?;
    }
    write_output(&cfg.out, "train.csv", &train_csv(&record))
}

/// `stage2.csv`: warmstarts from a stage-1 checkpoint at every threshold and
/// seed, each trained for `stage2.epochs` without regularization.
pub fn cmd_stage2(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let path = cfg.stage2.checkpoint.clone().unwrap_or_else(|| cfg.out.join("stage1.ckpt"));
    let (net, meta) = load_checkpoint(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if net.n_in() != cfg.task.n_in || net.classes() != cfg.task.classes {
        return Err(CliError::Config("checkpoint shape does not match the task configuration".into()));
    }
    let splits = cfg.splits()?;
    let te = meta.epoch;
    let decay = cfg.schedule.lr_decay;
    // place the checkpoint's rate at epoch `te` of an equivalent schedule
    let schedule = Schedule {
        total_epochs: te + cfg.stage2.epochs,
        transition_epoch: te,
        lr0: meta.lr / decay.powi(te.saturating_sub(1) as i32),
        ..cfg.schedule
    };
    let mut rows = Vec::new();
    for &threshold in &cfg.stage2.thresholds {
        for &seed in &cfg.stage2.seeds {
            let (trained, record) =
                train_stage2(&net, &splits, Truncation::Threshold(threshold), &schedule, &cfg.opts, seed)?;
            let final_val_loss = match record.last() {
                Some(e) => e.val_loss,
                None => record.transition.as_ref().map_or(f64::NAN, |t| t.val_after),
            };
            rows.push(Stage2Row {
                source_mode: meta.reg.mode.to_string(),
                threshold,
                params: trained.parameter_count(),
                final_val_loss,
                seed,
            });
        }
    }
    write_output(&cfg.out, "stage2.csv", &stage2_csv(&rows))
}

/// `transition.csv`: per-epoch traces for every mode and transition epoch.
pub fn cmd_transition(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let splits = cfg.splits()?;
    let mut out = String::from(TRANSITION_HEADER);
    for &mode in &cfg.transition.modes {
        let reg = RegConfig { mode, ..cfg.reg };
        for &te in &cfg.transition.epochs {
            let schedule = Schedule { transition_epoch: te, ..cfg.schedule };
            let spec = cfg.network_spec();
            let record = transition_experiment(
                &spec,
                &splits,
                &reg,
                &schedule,
                cfg.transition.target_params,
                &cfg.opts,
                cfg.seed,
            )?;
            transition_rows(&mut out, mode.name(), te, &record);
        }
    }
    write_output(&cfg.out, "transition.csv", &out)
}

/// `bench.csv`: reference and packed kernel throughput per batch size.
pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let b = &cfg.bench;
    let rows = benchmark(b.m, b.k, &b.batches, b.reps, b.seed)?;
    write_output(&cfg.out, "bench.csv", &bench_csv(&rows))
}

