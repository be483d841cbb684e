//! Trace-norm regularized training of low-rank factored recurrent layers,
//! plus a uint8 GEMM subsystem tuned for batch sizes 1 to 4.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense matrices, one-sided Jacobi SVD, norms and the
//!   nondimensional trace norm coefficient.
//! - [`lowrank`]: factored layers, GRU weight grouping and SVD warmstarts.
//! - [`rnn`]: a GRU classifier with hand-derived gradients.
//! - [`train`]: the two-stage training scheme and experiment drivers.
//! - [`qgemm`]: quantization, reference and packed uint8 GEMM, benchmarks.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod error;
pub mod linalg;
pub mod lowrank;
pub mod qgemm;
pub mod rnn;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Matrix, SvdResult};
pub use lowrank::{FactoredLayer, GruLayerWeights, SharingScheme, Weight, WeightKind};
pub use qgemm::{GemmResult, PackedWeights, QuantParams, QuantizedMatrix};
pub use rnn::{Dataset, Gradients, Network, NetworkSpec, TaskConfig};
pub use lowrank::Truncation;
pub use train::{EpochRecord, RegConfig, RegMode, RunRecord, Schedule, Splits, Stage2LrRule, TrainOptions};
