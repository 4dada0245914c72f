//! Adam and Nesterov-accelerated-gradient trainers over the same network,
//! loss, initialization and mini-batch machinery as the coordinate trainer.

use crate::nn::{gradient, loss, param_count, NetworkParams, NetworkShape, Sample};
use crate::train::{init_params, minibatch_indices, LogRecord, TrainError, TrainLog};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
    pub total_batch_steps: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl GdConfig {
    pub fn new(learning_rate: f64, minibatch_size: usize, total_batch_steps: usize, seed: u64) -> Self {
        assert!(learning_rate >= 0.0);
        GdConfig {
            learning_rate,
            minibatch_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.9,
            total_batch_steps,
            seed,
            log_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GdMethod {
    Adam,
    Nag,
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

#[derive(Debug, Clone)]
pub struct NagState {
    velocity: Vec<f64>,
}

impl NagState {
    pub fn new(n: usize) -> Self {
        NagState {
            velocity: vec![0.0; n],
        }
    }

    /// Where the lookahead gradient should be evaluated.
    pub fn lookahead(&self, params: &[f64], momentum: f64) -> Vec<f64> {
        params
            .iter()
            .zip(&self.velocity)
            .map(|(p, v)| p + momentum * v)
            .collect()
    }
}

/// One Nesterov update given the gradient at the lookahead point.
pub fn nag_step(
    state: &mut NagState,
    params: &mut [f64],
    grad_at_lookahead: &[f64],
    lr: f64,
    momentum: f64,
) {
    for i in 0..params.len() {
        state.velocity[i] = momentum * state.velocity[i] - lr * grad_at_lookahead[i];
        params[i] += state.velocity[i];
    }
}

/// Gradient-descent training with the same logging contract as the MPD trainer.
pub fn train_gd(
    shape: &NetworkShape,
    samples: &[Sample],
    train_indices: &[usize],
    val_indices: &[usize],
    config: &GdConfig,
    method: GdMethod,
) -> Result<TrainLog, TrainError> {
    let n_train = train_indices.len();
    if config.minibatch_size == 0 || config.minibatch_size > n_train {
        return Err(TrainError::InvalidMinibatchSize {
            got: config.minibatch_size,
            max: n_train,
        });
    }
    let train_set: Vec<Sample> = train_indices.iter().map(|&i| samples[i].clone()).collect();
    let val_set: Vec<Sample> = val_indices.iter().map(|&i| samples[i].clone()).collect();
    let n = param_count(shape);
    let mut flat = init_params(shape, config.seed).to_flat();
    let mut adam = AdamState::new(n);
    let mut nag = NagState::new(n);
    let mut records = Vec::new();
    let started = Instant::now();
    for t in 1..=config.total_batch_steps {
        for chunk in minibatch_indices(n_train, config.minibatch_size, t, config.seed)? {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            match method {
                GdMethod::Adam => {
                    let params = NetworkParams::from_flat(shape, &flat)?;
                    let grad = gradient(shape, &params, &batch)?;
                    adam_step(
                        &mut adam,
                        &mut flat,
                        &grad,
                        config.learning_rate,
                        config.beta1,
                        config.beta2,
                        config.epsilon,
                    );
                }
                GdMethod::Nag => {
                    let look = nag.lookahead(&flat, config.momentum);
                    let params = NetworkParams::from_flat(shape, &look)?;
                    let grad = gradient(shape, &params, &batch)?;
                    nag_step(&mut nag, &mut flat, &grad, config.learning_rate, config.momentum);
                }
            }
        }
        if config.log_every > 0 && t % config.log_every == 0 {
            let params = NetworkParams::from_flat(shape, &flat)?;
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
        final_params: NetworkParams::from_flat(shape, &flat)?,
    })
}
