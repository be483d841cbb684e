//! CSV rendering. Floats use Rust's shortest round-trip formatting, so equal
//! values always print identically.

use std::fmt::Write;

use tracenorm_core::qgemm::BenchRow;
use tracenorm_core::train::{RunRecord, SweepStatus, SweepTable};

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("mode,lambda_rec,lambda_nonrec,seed,final_train_loss,final_val_loss");
    for l in &table.layers {
        write!(out, ",nu_{l}").unwrap();
    }
    for l in &table.layers {
        write!(out, ",rank90_{l}").unwrap();
    }
    out.push_str(",params,status\n");
    for r in &table.rows {
        let status = match r.status {
            SweepStatus::Ok => "ok".to_string(),
            SweepStatus::Diverged { epoch } => format!("diverged@{epoch}"),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.mode,
            r.lambda_rec,
            r.lambda_nonrec,
            r.seed,
            r.final_train_loss,
            r.final_val_loss,
            join(&r.nu),
            join(&r.rank90),
            r.params,
            status
        )
        .unwrap();
    }
    out
}

/// One row of the stage-2 trade-off table.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Row {
    pub source_mode: String,
    pub threshold: f64,
    pub params: usize,
    pub final_val_loss: f64,
    pub seed: u64,
}

pub fn stage2_csv(rows: &[Stage2Row]) -> String {
    let mut out = String::from("source_mode,threshold,params,final_val_loss,seed\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.source_mode, r.threshold, r.params, r.final_val_loss, r.seed).unwrap();
    }
    out
}

pub const TRANSITION_HEADER: &str = "mode,transition_epoch,epoch,train_loss,val_loss,lr,params\n";

pub fn transition_rows(out: &mut String, mode: &str, transition_epoch: usize, record: &RunRecord) {
    for e in &record.epochs {
        writeln!(
            out,
            "{mode},{transition_epoch},{},{},{},{},{}",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.params
        )
        .unwrap();
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("kernel,m,k,batch,reps,median_seconds,gops\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{},{}", r.kernel, r.m, r.k, r.batch, r.reps, r.median_seconds, r.gops).unwrap();
    }
    out
}

/// Per-epoch trace of a single run.
pub fn train_csv(record: &RunRecord) -> String {
    let mut out = String::from("epoch,stage,train_loss,val_loss,lr,params");
    for l in &record.layers {
        write!(out, ",nu_{l}").unwrap();
    }
    for l in &record.layers {
        write!(out, ",rank90_{l}").unwrap();
    }
    out.push('\n');
    for e in &record.epochs {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.epoch,
            e.stage,
            e.train_loss,
            e.val_loss,
            e.lr,
            e.params,
            join(&e.nu),
            join(&e.rank90)
        )
        .unwrap();
    }
    out
}
