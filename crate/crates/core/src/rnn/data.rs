//! Synthetic sequence classification task.
//!
//! Every class owns a smooth latent trajectory (a bank of sinusoids with
//! class-specific frequencies and phases). Samples project the trajectory
//! through a shared random matrix, jitter its phase and add isotropic noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid_config, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub classes: usize,
    pub seq_len: usize,
    pub n_in: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub latent_dim: usize,
    pub noise: f64,
    pub phase_jitter: f64,
    pub data_seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            seq_len: 12,
            n_in: 16,
            n_train: 384,
            n_val: 384,
            latent_dim: 4,
            noise: 1.0,
            phase_jitter: 0.6,
            data_seed: 7,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(invalid_config("task.classes must be at least 2"));
        }
        if self.seq_len == 0 || self.n_in == 0 || self.latent_dim == 0 {
            return Err(invalid_config("task.seq_len, task.n_in and task.latent_dim must be positive"));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(invalid_config("task.n_train and task.n_val must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.phase_jitter >= 0.0 && self.phase_jitter.is_finite()) {
            return Err(invalid_config("task.noise and task.phase_jitter must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Deterministically generates `(train, validation)` sets.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.data_seed);
        let k = self.latent_dim;
        let scale = 1.0 / (k as f64).sqrt();
        let proj: Vec<f64> = (0..self.n_in * k).map(|_| gauss(&mut rng) * scale).collect();
        let freqs: Vec<f64> = (0..self.classes * k).map(|_| rng.random_range(0.2..1.2)).collect();
        let phases: Vec<f64> = (0..self.classes * k)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();

        let sample = |n: usize, rng: &mut ChaCha8Rng| -> Dataset {
            let mut xs = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % self.classes;
                let jitter: Vec<f64> = (0..k).map(|_| gauss(rng) * self.phase_jitter).collect();
                let mut seq = Vec::with_capacity(self.seq_len * self.n_in);
                let mut latent = vec![0.0; k];
                for t in 0..self.seq_len {
                    for (j, l) in latent.iter_mut().enumerate() {
                        *l = (freqs[c * k + j] * t as f64 + phases[c * k + j] + jitter[j]).sin();
                    }
                    for f in 0..self.n_in {
                        let clean: f64 = (0..k).map(|j| proj[f * k + j] * latent[j]).sum();
                        seq.push(clean + self.noise * gauss(rng));
                    }
                }
                xs.push(seq);
                labels.push(c);
            }
            Dataset { seq_len: self.seq_len, n_in: self.n_in, classes: self.classes, xs, labels }
        };
        let train = sample(self.n_train, &mut rng);
        let val = sample(self.n_val, &mut rng);
        Ok((train, val))
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Fixed-length labelled sequences, each stored as `seq_len x n_in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seq_len: usize,
    pub n_in: usize,
    pub classes: usize,
    pub xs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the listed sequences into per-timestep `batch x n_in` matrices.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let b = indices.len();
        let xs = (0..self.seq_len)
            .map(|t| {
                let mut data = Vec::with_capacity(b * self.n_in);
                for &i in indices {
                    data.extend_from_slice(&self.xs[i][t * self.n_in..(t + 1) * self.n_in]);
                }
                Matrix::from_raw(b, self.n_in, data)
            })
            .collect();
        Batch { xs, labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }

    pub fn full_batch(&self) -> Batch {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }
}

/// One minibatch: `xs[t]` is the `batch x n_in` input at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub xs: Vec<Matrix>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.labels.len()
    }
}
