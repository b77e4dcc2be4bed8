//! Seeded randomness.
//!
//! Every stochastic operation takes an explicit [`Rng`]: ChaCha with 8 rounds
//! (`rand_chacha::ChaCha8Rng`), a counter-based generator whose output is
//! fixed for a given seed and stream. Independent consumers inside one run
//! (initialization, shuffling, noise and latent sampling) draw from separate
//! streams of the same seed so adding draws to one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::matrix::Matrix;

pub type Rng = ChaCha8Rng;

/// Named stream ids, so the mapping from purpose to stream is fixed.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Sampling = 3,
    Synthetic = 4,
    Vectors = 5,
    Perturbation = 6,
    Noise = 7,
}

pub fn seeded(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| std * standard_normal(rng))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Draws `mu + exp(0.5 * log_var) * eps` with `eps ~ N(0, I)`; `log_var` is
/// clamped to `[LOG_VAR_MIN, LOG_VAR_MAX]` first.
pub fn gaussian_sample(mu: &[f64], log_var: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    if mu.len() != log_var.len() {
        return Err(Error::Shape {
            op: "gaussian_sample",
            left: (1, mu.len()),
            right: (1, log_var.len()),
        });
    }
    Ok(mu
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| {
            m + (0.5 * lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).exp() * standard_normal(rng)
        })
        .collect())
}
