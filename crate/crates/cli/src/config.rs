//! Flat `key=value` experiment configuration.
//!
//! One setting per line, `#` starts a comment. Keys carry a section prefix
//! (`train.lambda_nonrec=0.001`); list values are comma separated. Every key
//! and its default is listed in [`KEYS`].

use std::path::{Path, PathBuf};

use tracenorm_core::rnn::NetworkSpec;
use tracenorm_core::train::{RegConfig, RegMode, Schedule, Splits, Stage2LrRule, TrainOptions};
use tracenorm_core::{SharingScheme, TaskConfig};

use crate::error::CliError;

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("task.classes", "8", "number of sequence classes"),
    ("task.seq_len", "12", "time steps per sequence"),
    ("task.n_in", "16", "input features per step"),
    ("task.n_train", "384", "training sequences"),
    ("task.n_val", "384", "validation sequences"),
    ("task.latent_dim", "4", "dimension of the class trajectories"),
    ("task.noise", "1", "standard deviation of the additive input noise"),
    ("task.phase_jitter", "0.6", "standard deviation of the per-sample phase shift"),
    ("task.data_seed", "7", "seed of the synthetic data generator"),
    ("model.hidden", "32", "GRU widths, one per layer"),
    ("model.sharing", "partially_joint", "completely_joint, partially_joint or completely_split"),
    ("train.mode", "trace_norm", "trace_norm, l2 or none"),
    ("train.lambda_rec", "0", "penalty strength on recurrent weights"),
    ("train.lambda_nonrec", "0.01", "penalty strength on nonrecurrent weights"),
    ("train.epochs", "40", "total epoch budget"),
    ("train.transition_epoch", "20", "last stage-1 epoch"),
    ("train.lr0", "0.05", "initial learning rate"),
    ("train.lr_decay", "0.95", "per-epoch learning rate factor"),
    ("train.stage2_lr_rule", "carry_over", "carry_over or three_times_final"),
    ("train.batch_size", "32", "minibatch size"),
    ("train.momentum", "0.9", "SGD momentum"),
    ("train.clip_norm", "5", "gradient norm cap, 0 disables"),
    ("train.seed", "1", "initialization and shuffling seed"),
    ("train.threshold", "0.9", "stage-2 variance threshold of the train command"),
    ("sweep.lambda_rec", "0", "grid of recurrent strengths"),
    ("sweep.lambda_nonrec", "0,0.0001,0.001,0.01,0.1", "grid of nonrecurrent strengths"),
    ("sweep.seeds", "1", "seeds per grid point"),
    ("stage2.checkpoint", "", "stage-1 checkpoint (defaults to <out>/stage1.ckpt)"),
    ("stage2.thresholds", "0.5,0.7,0.9,1", "variance thresholds to warmstart from"),
    ("stage2.seeds", "1", "shuffling seeds of the stage-2 runs"),
    ("stage2.epochs", "10", "stage-2 epoch budget"),
    ("transition.epochs", "5,10,15,20", "transition epochs to try"),
    ("transition.modes", "trace_norm,l2", "regularization modes to compare"),
    ("transition.target_params", "3000", "parameter budget after truncation"),
    ("bench.m", "6144", "weight rows"),
    ("bench.k", "320", "weight columns"),
    ("bench.batches", "1,2,3,4", "batch sizes"),
    ("bench.reps", "50", "timed repetitions per kernel and batch"),
    ("bench.seed", "1", "seed of the random operands"),
    ("output.dir", "out", "directory for CSVs and checkpoints"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub lambda_rec: Vec<f64>,
    pub lambda_nonrec: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Config {
    pub checkpoint: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionConfig {
    pub epochs: Vec<usize>,
    pub modes: Vec<RegMode>,
    pub target_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub m: usize,
    pub k: usize,
    pub batches: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub hidden: Vec<usize>,
    pub sharing: SharingScheme,
    pub reg: RegConfig,
    pub schedule: Schedule,
    pub opts: TrainOptions,
    pub seed: u64,
    pub threshold: f64,
    pub sweep: SweepConfig,
    pub stage2: Stage2Config,
    pub transition: TransitionConfig,
    pub bench: BenchConfig,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = ExperimentConfig {
            task: TaskConfig::default(),
            hidden: vec![],
            sharing: SharingScheme::default(),
            reg: RegConfig::none(),
            schedule: Schedule::default(),
            opts: TrainOptions::default(),
            seed: 0,
            threshold: 0.0,
            sweep: SweepConfig { lambda_rec: vec![], lambda_nonrec: vec![], seeds: vec![] },
            stage2: Stage2Config { checkpoint: None, thresholds: vec![], seeds: vec![], epochs: 0 },
            transition: TransitionConfig { epochs: vec![], modes: vec![], target_params: 0 },
            bench: BenchConfig { m: 0, k: 0, batches: vec![], reps: 0, seed: 0 },
            out: PathBuf::new(),
        };
        for (key, value, _) in KEYS {
            cfg.set(key, value).expect("documented defaults parse");
        }
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(CliError::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn core_parse<T: std::str::FromStr<Err = tracenorm_core::Error>>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|e: tracenorm_core::Error| CliError::Config(format!("{key}: {e}")))
}

impl ExperimentConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "task.classes" => self.task.classes = parse(key, v)?,
            "task.seq_len" => self.task.seq_len = parse(key, v)?,
            "task.n_in" => self.task.n_in = parse(key, v)?,
            "task.n_train" => self.task.n_train = parse(key, v)?,
            "task.n_val" => self.task.n_val = parse(key, v)?,
            "task.latent_dim" => self.task.latent_dim = parse(key, v)?,
            "task.noise" => self.task.noise = parse(key, v)?,
            "task.phase_jitter" => self.task.phase_jitter = parse(key, v)?,
            "task.data_seed" => self.task.data_seed = parse(key, v)?,
            "model.hidden" => self.hidden = parse_list(key, v)?,
            "model.sharing" => self.sharing = core_parse(key, v)?,
            "train.mode" => self.reg.mode = core_parse(key, v)?,
            "train.lambda_rec" => self.reg.lambda_rec = parse(key, v)?,
            "train.lambda_nonrec" => self.reg.lambda_nonrec = parse(key, v)?,
            "train.epochs" => self.schedule.total_epochs = parse(key, v)?,
            "train.transition_epoch" => self.schedule.transition_epoch = parse(key, v)?,
            "train.lr0" => self.schedule.lr0 = parse(key, v)?,
            "train.lr_decay" => self.schedule.lr_decay = parse(key, v)?,
            "train.stage2_lr_rule" => self.schedule.stage2_lr_rule = core_parse::<Stage2LrRule>(key, v)?,
            "train.batch_size" => self.opts.batch_size = parse(key, v)?,
            "train.momentum" => self.opts.momentum = parse(key, v)?,
            "train.clip_norm" => {
                let c: f64 = parse(key, v)?;
                self.opts.clip_norm = (c != 0.0).then_some(c);
            }
            "train.seed" => self.seed = parse(key, v)?,
            "train.threshold" => self.threshold = parse(key, v)?,
            "sweep.lambda_rec" => self.sweep.lambda_rec = parse_list(key, v)?,
            "sweep.lambda_nonrec" => self.sweep.lambda_nonrec = parse_list(key, v)?,
            "sweep.seeds" => self.sweep.seeds = parse_list(key, v)?,
            "stage2.checkpoint" => self.stage2.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "stage2.thresholds" => self.stage2.thresholds = parse_list(key, v)?,
            "stage2.seeds" => self.stage2.seeds = parse_list(key, v)?,
            "stage2.epochs" => self.stage2.epochs = parse(key, v)?,
            "transition.epochs" => self.transition.epochs = parse_list(key, v)?,
            "transition.modes" => {
                self.transition.modes = v.split(',').map(|s| core_parse(key, s)).collect::<Result<_, _>>()?
            }
            "transition.target_params" => self.transition.target_params = parse(key, v)?,
            "bench.m" => self.bench.m = parse(key, v)?,
            "bench.k" => self.bench.k = parse(key, v)?,
            "bench.batches" => self.bench.batches = parse_list(key, v)?,
            "bench.reps" => self.bench.reps = parse(key, v)?,
            "bench.seed" => self.bench.seed = parse(key, v)?,
            "output.dir" => self.out = PathBuf::from(v),
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` pairs (the `--set` syntax).
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (key, value) =
            pair.split_once('=').ok_or_else(|| CliError::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(key.trim(), value)
    }

    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set_pair(line).map_err(|e| CliError::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Cross-field checks shared by every command.
    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |r: tracenorm_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        wrap(self.task.validate())?;
        wrap(self.reg.validate())?;
        wrap(self.schedule.validate())?;
        wrap(self.opts.validate())?;
        if self.hidden.contains(&0) {
            return Err(CliError::Config("model.hidden entries must be positive".into()));
        }
        let unit = |t: f64| t > 0.0 && t <= 1.0;
        if !unit(self.threshold) || !self.stage2.thresholds.iter().all(|&t| unit(t)) {
            return Err(CliError::Config("thresholds must lie in (0, 1]".into()));
        }
        if let Some(&e) = self.transition.epochs.iter().find(|&&e| e > self.schedule.total_epochs) {
            return Err(CliError::Config(format!("transition epoch {e} exceeds train.epochs")));
        }
        if self.bench.m == 0 || self.bench.k == 0 || self.bench.reps == 0 || self.bench.batches.contains(&0) {
            return Err(CliError::Config("bench sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            n_in: self.task.n_in,
            hidden: self.hidden.clone(),
            classes: self.task.classes,
            sharing: self.sharing,
            factored: self.reg.mode == RegMode::TraceNorm,
        }
    }

    pub fn splits(&self) -> Result<Splits, CliError> {
        let (train, val) = self.task.generate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Splits { train, val })
    }

    /// All settings in `KEYS` order, in the same syntax the parser reads.
    pub fn to_text(&self) -> String {
        fn list<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let s = &self.schedule;
        let values: Vec<String> = vec![
            self.task.classes.to_string(),
            self.task.seq_len.to_string(),
            self.task.n_in.to_string(),
            self.task.n_train.to_string(),
            self.task.n_val.to_string(),
            self.task.latent_dim.to_string(),
            self.task.noise.to_string(),
            self.task.phase_jitter.to_string(),
            self.task.data_seed.to_string(),
            list(&self.hidden),
            self.sharing.to_string(),
            self.reg.mode.to_string(),
            self.reg.lambda_rec.to_string(),
            self.reg.lambda_nonrec.to_string(),
            s.total_epochs.to_string(),
            s.transition_epoch.to_string(),
            s.lr0.to_string(),
            s.lr_decay.to_string(),
            s.stage2_lr_rule.to_string(),
            self.opts.batch_size.to_string(),
            self.opts.momentum.to_string(),
            self.opts.clip_norm.unwrap_or(0.0).to_string(),
            self.seed.to_string(),
            self.threshold.to_string(),
            list(&self.sweep.lambda_rec),
            list(&self.sweep.lambda_nonrec),
            list(&self.sweep.seeds),
            self.stage2.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            list(&self.stage2.thresholds),
            list(&self.stage2.seeds),
            self.stage2.epochs.to_string(),
            list(&self.transition.epochs),
            list(&self.transition.modes),
            self.transition.target_params.to_string(),
            self.bench.m.to_string(),
            self.bench.k.to_string(),
            list(&self.bench.batches),
            self.bench.reps.to_string(),
            self.bench.seed.to_string(),
            self.out.display().to_string(),
        ];
        KEYS.iter().zip(values).map(|((k, _, _), v)| format!("{k}={v}\n")).collect()
    }
}
