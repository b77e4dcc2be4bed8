//! Central finite-difference check of the full-model loss gradient.

use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::network::{forward, loss, Mode};
use crate::model::params::ModelParams;
use crate::tensor::matrix::Matrix;
use crate::tensor::random::{seeded, Stream};
use crate::tensor::tape::Tape;

pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: &'static str,
    /// Largest `|analytic − numeric| / max(1, |numeric|)` over the entries.
    pub max_rel_err: f64,
}

/// Loss with the noise and sampling generators reseeded from `seed`, so the
/// drawn noise and `eps` are identical on every call.
pub fn frozen_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    e: &Matrix,
    slots: &[usize],
    intent: usize,
    seed: u64,
    with_grads: bool,
) -> Result<(f64, Option<Vec<Matrix>>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut noise = seeded(seed, Stream::Noise);
    let mut sampling = seeded(seed, Stream::Sampling);
    let g = forward(
        &mut tape,
        &bound,
        cfg,
        e,
        Mode::Train {
            noise: &mut noise,
            sampling: &mut sampling,
        },
    )?;
    let l = loss(&mut tape, &g, slots, intent)?;
    let value = tape.value(l).item();
    if !with_grads {
        return Ok((value, None));
    }
    let grads = tape.backward(l)?;
    let per: Vec<Matrix> = bound
        .values()
        .into_iter()
        .zip(params.values())
        .map(|(id, m)| grads.get_or_zeros(*id, m.shape()))
        .collect();
    Ok((value, Some(per)))
}

/// Compares every entry of every tensor against central differences.
pub fn gradient_check(
    params: &ModelParams,
    cfg: &ModelConfig,
    e: &Matrix,
    slots: &[usize],
    intent: usize,
    seed: u64,
) -> Result<Vec<TensorCheck>> {
    let (_, analytic) = frozen_loss(params, cfg, e, slots, intent, seed, true)?;
    let analytic = analytic.expect("gradients requested");
    let names: Vec<&'static str> = params.entries().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::with_capacity(names.len());
    for (k, name) in names.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..analytic[k].len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                p.values_mut()[k].data_mut()[i] += delta;
                Ok(frozen_loss(&p, cfg, e, slots, intent, seed, false)?.0)
            };
            let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
            let rel = (analytic[k].data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(rel);
        }
        out.push(TensorCheck {
            name,
            max_rel_err: worst,
        });
    }
    Ok(out)
}
