//! The coordinate-descent trainer: build per-sample messages, merge them into
//! the single-parameter restriction of the loss, minimize it globally, write
//! the one parameter back. Mini-batches partition a fresh permutation of the
//! training set each batch step.

use crate::nn::{
    build_message, loss, param_count, NetworkParams, NetworkShape, NnError, ParamRef, Sample,
};
use crate::pwp::{sum_pwp, PwpError, PwpFunction};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("mini-batch size {got} out of range 1..={max}")]
    InvalidMinibatchSize { got: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("the merged message is unbounded below")]
    UnboundedMessage,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pwp(#[from] PwpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    RandomWithReplacement,
    PermutationSweep,
}

/// Mini-batch growth: starting at `start_step`, multiply the mini-batch size
/// by `factor` every `every` batch steps, up to `cap`.
#[derive(Debug, Clone, Copy)]
pub struct GrowthSchedule {
    pub start_step: usize,
    pub factor: usize,
    pub cap: usize,
    pub every: usize,
}

impl GrowthSchedule {
    pub fn paper_default(cap: usize) -> Self {
        GrowthSchedule {
            start_step: 200,
            factor: 2,
            cap,
            every: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub total_batch_steps: usize,
    pub minibatch_size: usize,
    pub growth: Option<GrowthSchedule>,
    pub seed: u64,
    pub sweep_mode: SweepMode,
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(total_batch_steps: usize, minibatch_size: usize, seed: u64) -> Self {
        TrainConfig {
            total_batch_steps,
            minibatch_size,
            growth: None,
            seed,
            sweep_mode: SweepMode::PermutationSweep,
            log_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub batch_step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub final_params: NetworkParams,
}

impl TrainLog {
    /// CSV with one row per logged batch step, 10+ significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,val_loss,wall_ms\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.10e},{:.10e},{:.3}\n",
                r.batch_step, r.train_loss, r.val_loss, r.wall_ms
            ));
        }
        out
    }
}

/// Uniform initialization on (-sqrt(3 sigma), sqrt(3 sigma)) with the Kaiming
/// variance sigma = 2 / fan_in per layer. Deterministic given the seed.
pub fn init_params(shape: &NetworkShape, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |bound: f64, rng: &mut ChaCha8Rng| loop {
        let v = rng.random_range(-bound..bound);
        if v > -bound {
            return v;
        }
    };
    let bound1 = (3.0 * 2.0 / shape.d_in as f64).sqrt();
    let bound2 = (3.0 * 2.0 / shape.d_hidden as f64).sqrt();
    let mut params = NetworkParams::zeros(shape);
    for v in params.w1.iter_mut().chain(&mut params.b1) {
        *v = draw(bound1, &mut rng);
    }
    for v in params.w2.iter_mut().chain(&mut params.b2) {
        *v = draw(bound2, &mut rng);
    }
    params
}

/// Partition of one batch step: a seeded permutation of `0..s_total` chopped
/// into `ceil(s_total / s_prime)` chunks. A fresh permutation per batch step.
pub fn minibatch_indices(
    s_total: usize,
    s_prime: usize,
    batch_step: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, TrainError> {
    if s_prime == 0 || s_prime > s_total {
        return Err(TrainError::InvalidMinibatchSize {
            got: s_prime,
            max: s_total,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch_step as u64 + 1);
    let mut perm: Vec<usize> = (0..s_total).collect();
    perm.shuffle(&mut rng);
    Ok(perm.chunks(s_prime).map(|c| c.to_vec()).collect())
}

/// One coordinate update: merge the batch messages into the h-function and
/// move `theta_p` to its global minimum. No other parameter changes.
pub fn mpd_step(
    shape: &NetworkShape,
    params: &mut NetworkParams,
    samples: &[Sample],
    batch: &[usize],
    p: ParamRef,
) -> Result<(f64, PwpFunction), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let messages: Vec<PwpFunction> = batch
        .par_iter()
        .map(|&s| build_message(shape, params, &samples[s], p))
        .collect::<Result<_, _>>()?;
    let h = sum_pwp(&messages)?;
    let hint = params.get(p);
    let min = h.global_min(hint).map_err(|e| match e {
        PwpError::UnboundedBelow => TrainError::UnboundedMessage,
        other => TrainError::Pwp(other),
    })?;
    params.set(p, min.argmin);
    Ok((min.argmin, h))
}

struct ParamPicker {
    rng: ChaCha8Rng,
    mode: SweepMode,
    order: Vec<usize>,
    pos: usize,
}

impl ParamPicker {
    fn new(n: usize, mode: SweepMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        ParamPicker {
            rng,
            mode,
            order: (0..n).collect(),
            pos: n, // force a shuffle on first pick
        }
    }

    fn next(&mut self) -> usize {
        match self.mode {
            SweepMode::RandomWithReplacement => self.rng.random_range(0..self.order.len()),
            SweepMode::PermutationSweep => {
                if self.pos >= self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                let idx = self.order[self.pos];
                self.pos += 1;
                idx
            }
        }
    }
}

/// Runs `total_batch_steps` batch steps of mini-batch MPD over the training
/// split, logging train/val loss per batch step. Terminates on budget only.
pub fn train(
    shape: &NetworkShape,
    samples: &[Sample],
    train_indices: &[usize],
    val_indices: &[usize],
    config: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    let mut params = init_params(shape, config.seed);
    let n_train = train_indices.len();
    if config.minibatch_size == 0 || config.minibatch_size > n_train {
        return Err(TrainError::InvalidMinibatchSize {
            got: config.minibatch_size,
            max: n_train,
        });
    }
    let train_set: Vec<Sample> = train_indices.iter().map(|&i| samples[i].clone()).collect();
    let val_set: Vec<Sample> = val_indices.iter().map(|&i| samples[i].clone()).collect();
    let mut picker = ParamPicker::new(param_count(shape), config.sweep_mode, config.seed);
    let mut s_prime = config.minibatch_size;
    let mut records = Vec::new();
    let started = Instant::now();
    let all: Vec<usize> = (0..n_train).collect();
    for t in 1..=config.total_batch_steps {
        for chunk in minibatch_indices(n_train, s_prime, t, config.seed)? {
            let p = ParamRef::from_flat(shape, picker.next()).map_err(TrainError::Nn)?;
            let batch = if chunk.len() == n_train { &all } else { &chunk };
            mpd_step(shape, &mut params, &train_set, batch, p)?;
        }
        if let Some(g) = config.growth {
            if t >= g.start_step && (t - g.start_step) % g.every == 0 {
                s_prime = (s_prime * g.factor).min(g.cap).min(n_train);
            }
        }
        if config.log_every > 0 && t % config.log_every == 0 {
            let train_loss = loss(shape, &params, &train_set)?;
            let val_loss = if val_set.is_empty() {
                f64::NAN
            } else {
                loss(shape, &params, &val_set)?
            };
            records.push(LogRecord {
                batch_step: t,
                train_loss,
                val_loss,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(TrainLog {
        records,
        final_params: params,
    })
}
