use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracenorm_cli::commands::{cmd_bench, cmd_stage2, cmd_sweep, cmd_train, cmd_transition};
use tracenorm_cli::{CliError, ExperimentConfig};

/// Low-rank GRU training with trace-norm regularization, and quantized GEMM
/// benchmarks.
#[derive(Parser)]
#[command(name = "tracenorm", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every command (replaces the seed lists).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.lr0=0.1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Stage-1 training over a grid of regularization strengths.
    Sweep,
    /// Truncate a stage-1 checkpoint at several thresholds and fine-tune.
    Stage2 {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated variance thresholds.
        #[arg(long)]
        thresholds: Option<String>,
    },
    /// Learning curves for several transition epochs at a fixed parameter budget.
    Transition,
    /// Throughput of the reference and packed uint8 GEMM kernels.
    Bench {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated batch sizes.
        #[arg(long)]
        batches: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// One two-stage run, writing checkpoints and a per-epoch trace.
    Train,
    /// Print the effective configuration.
    Config,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for pair in &cli.global.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = cli.global.seed {
        for key in ["train.seed", "sweep.seeds", "stage2.seeds", "bench.seed"] {
            cfg.set(key, &seed.to_string())?;
        }
    }
    if let Some(out) = &cli.global.out {
        cfg.out = out.clone();
    }
    match &cli.command {
        Command::Stage2 { checkpoint, thresholds } => {
            if let Some(c) = checkpoint {
                cfg.stage2.checkpoint = Some(c.clone());
            }
            if let Some(t) = thresholds {
                cfg.set("stage2.thresholds", t)?;
            }
        }
        Command::Bench { m, k, batches, reps } => {
            if let Some(m) = m {
                cfg.bench.m = *m;
            }
            if let Some(k) = k {
                cfg.bench.k = *k;
            }
            if let Some(b) = batches {
                cfg.set("bench.batches", b)?;
            }
            if let Some(r) = reps {
                cfg.bench.reps = *r;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = build_config(cli)?;
    let path = match cli.command {
        Command::Sweep => cmd_sweep(&cfg)?,
        Command::Stage2 { .. } => cmd_stage2(&cfg)?,
        Command::Transition => cmd_transition(&cfg)?,
        Command::Bench { .. } => cmd_bench(&cfg)?,
        Command::Train => cmd_train(&cfg)?,
        Command::Config => {
            print!("{}", cfg.to_text());
            return Ok(());
        }
    };
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
