//! One-hidden-layer feed-forward network with a piecewise-linear activation.
//!
//! Besides the usual forward pass, loss and analytic gradient, this module
//! builds the network output and the per-sample squared error as *exact*
//! piecewise functions of a single scalar parameter with all others frozen.

use crate::pwp::{compose_activation, sum_pwp, PwlActivation, PwpError, PwpFunction};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("parameter reference out of bounds")]
    InvalidParamRef,
    #[error(transparent)]
    Pwp(#[from] PwpError),
}

#[derive(Debug, Clone)]
pub struct NetworkShape {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub activation: PwlActivation,
}

impl NetworkShape {
    pub fn new(d_in: usize, d_hidden: usize, d_out: usize, activation: PwlActivation) -> Self {
        assert!(d_in >= 1 && d_hidden >= 1 && d_out >= 1);
        NetworkShape {
            d_in,
            d_hidden,
            d_out,
            activation,
        }
    }
}

/// Total number of scalar parameters of a shape.
pub fn param_count(shape: &NetworkShape) -> usize {
    shape.d_hidden * shape.d_in + shape.d_hidden + shape.d_out * shape.d_hidden + shape.d_out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    W1,
    B1,
    W2,
    B2,
}

/// One scalar parameter: layer kind plus its (row, col) position.
/// Bias kinds use only `row`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub kind: ParamKind,
    pub row: usize,
    pub col: usize,
}

impl ParamRef {
    /// Flat index: W1 row-major, then B1, then W2 row-major, then B2.
    pub fn flat_index(&self, shape: &NetworkShape) -> usize {
        let w1 = shape.d_hidden * shape.d_in;
        let b1 = shape.d_hidden;
        let w2 = shape.d_out * shape.d_hidden;
        match self.kind {
            ParamKind::W1 => self.row * shape.d_in + self.col,
            ParamKind::B1 => w1 + self.row,
            ParamKind::W2 => w1 + b1 + self.row * shape.d_hidden + self.col,
            ParamKind::B2 => w1 + b1 + w2 + self.row,
        }
    }

    pub fn from_flat(shape: &NetworkShape, idx: usize) -> Result<Self, NnError> {
        let w1 = shape.d_hidden * shape.d_in;
        let b1 = shape.d_hidden;
        let w2 = shape.d_out * shape.d_hidden;
        let b2 = shape.d_out;
        if idx < w1 {
            Ok(ParamRef {
                kind: ParamKind::W1,
                row: idx / shape.d_in,
                col: idx % shape.d_in,
            })
        } else if idx < w1 + b1 {
            Ok(ParamRef {
                kind: ParamKind::B1,
                row: idx - w1,
                col: 0,
            })
        } else if idx < w1 + b1 + w2 {
            let k = idx - w1 - b1;
            Ok(ParamRef {
                kind: ParamKind::W2,
                row: k / shape.d_hidden,
                col: k % shape.d_hidden,
            })
        } else if idx < w1 + b1 + w2 + b2 {
            Ok(ParamRef {
                kind: ParamKind::B2,
                row: idx - w1 - b1 - w2,
                col: 0,
            })
        } else {
            Err(NnError::InvalidParamRef)
        }
    }

    fn validate(&self, shape: &NetworkShape) -> Result<(), NnError> {
        let ok = match self.kind {
            ParamKind::W1 => self.row < shape.d_hidden && self.col < shape.d_in,
            ParamKind::B1 => self.row < shape.d_hidden && self.col == 0,
            ParamKind::W2 => self.row < shape.d_out && self.col < shape.d_hidden,
            ParamKind::B2 => self.row < shape.d_out && self.col == 0,
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidParamRef)
        }
    }
}

/// Weights and biases; matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(shape: &NetworkShape) -> Self {
        NetworkParams {
            d_in: shape.d_in,
            d_hidden: shape.d_hidden,
            d_out: shape.d_out,
            w1: vec![0.0; shape.d_hidden * shape.d_in],
            b1: vec![0.0; shape.d_hidden],
            w2: vec![0.0; shape.d_out * shape.d_hidden],
            b2: vec![0.0; shape.d_out],
        }
    }

    pub fn get(&self, p: ParamRef) -> f64 {
        match p.kind {
            ParamKind::W1 => self.w1[p.row * self.d_in + p.col],
            ParamKind::B1 => self.b1[p.row],
            ParamKind::W2 => self.w2[p.row * self.d_hidden + p.col],
            ParamKind::B2 => self.b2[p.row],
        }
    }

    pub fn set(&mut self, p: ParamRef, v: f64) {
        match p.kind {
            ParamKind::W1 => self.w1[p.row * self.d_in + p.col] = v,
            ParamKind::B1 => self.b1[p.row] = v,
            ParamKind::W2 => self.w2[p.row * self.d_hidden + p.col] = v,
            ParamKind::B2 => self.b2[p.row] = v,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn from_flat(shape: &NetworkShape, flat: &[f64]) -> Result<Self, NnError> {
        if flat.len() != param_count(shape) {
            return Err(NnError::DimensionMismatch {
                expected: param_count(shape),
                got: flat.len(),
            });
        }
        let w1n = shape.d_hidden * shape.d_in;
        let b1n = shape.d_hidden;
        let w2n = shape.d_out * shape.d_hidden;
        Ok(NetworkParams {
            d_in: shape.d_in,
            d_hidden: shape.d_hidden,
            d_out: shape.d_out,
            w1: flat[..w1n].to_vec(),
            b1: flat[w1n..w1n + b1n].to_vec(),
            w2: flat[w1n + b1n..w1n + b1n + w2n].to_vec(),
            b2: flat[w1n + b1n + w2n..].to_vec(),
        })
    }
}

/// One standardized input-output pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Hidden pre-activations, activations and outputs for one input.
struct ForwardState {
    z1t: Vec<f64>,
    z1: Vec<f64>,
    out: Vec<f64>,
}

fn forward_state(shape: &NetworkShape, params: &NetworkParams, x: &[f64]) -> ForwardState {
    let mut z1t = vec![0.0; shape.d_hidden];
    for j in 0..shape.d_hidden {
        let mut acc = params.b1[j];
        let row = &params.w1[j * shape.d_in..(j + 1) * shape.d_in];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        z1t[j] = acc;
    }
    let z1: Vec<f64> = z1t.iter().map(|&z| shape.activation.eval(z)).collect();
    let mut out = vec![0.0; shape.d_out];
    for d in 0..shape.d_out {
        let mut acc = params.b2[d];
        let row = &params.w2[d * shape.d_hidden..(d + 1) * shape.d_hidden];
        for (wj, zj) in row.iter().zip(&z1) {
            acc += wj * zj;
        }
        out[d] = acc;
    }
    ForwardState { z1t, z1, out }
}

pub fn forward(
    shape: &NetworkShape,
    params: &NetworkParams,
    x: &[f64],
) -> Result<Vec<f64>, NnError> {
    if x.len() != shape.d_in {
        return Err(NnError::DimensionMismatch {
            expected: shape.d_in,
            got: x.len(),
        });
    }
    Ok(forward_state(shape, params, x).out)
}

/// Mean squared error over the sample set.
pub fn loss(
    shape: &NetworkShape,
    params: &NetworkParams,
    samples: &[Sample],
) -> Result<f64, NnError> {
    if samples.is_empty() {
        return Err(NnError::EmptySampleSet);
    }
    let mut total = 0.0;
    for s in samples {
        let out = forward(shape, params, &s.x)?;
        for (o, y) in out.iter().zip(&s.y) {
            let e = y - o;
            total += e * e;
        }
    }
    Ok(total / samples.len() as f64)
}

/// Exact gradient of `loss` in flat-index order via the chain rule.
/// At a kink the activation derivative is the slope of the right piece.
pub fn gradient(
    shape: &NetworkShape,
    params: &NetworkParams,
    samples: &[Sample],
) -> Result<Vec<f64>, NnError> {
    if samples.is_empty() {
        return Err(NnError::EmptySampleSet);
    }
    let mut gw1 = vec![0.0; params.w1.len()];
    let mut gb1 = vec![0.0; params.b1.len()];
    let mut gw2 = vec![0.0; params.w2.len()];
    let mut gb2 = vec![0.0; params.b2.len()];
    for s in samples {
        if s.x.len() != shape.d_in {
            return Err(NnError::DimensionMismatch {
                expected: shape.d_in,
                got: s.x.len(),
            });
        }
        let st = forward_state(shape, params, &s.x);
        // d loss_s / d out_d = 2 (out_d - y_d)
        let dout: Vec<f64> = st.out.iter().zip(&s.y).map(|(o, y)| 2.0 * (o - y)).collect();
        for d in 0..shape.d_out {
            gb2[d] += dout[d];
            for j in 0..shape.d_hidden {
                gw2[d * shape.d_hidden + j] += dout[d] * st.z1[j];
            }
        }
        for j in 0..shape.d_hidden {
            let mut dz1 = 0.0;
            for d in 0..shape.d_out {
                dz1 += dout[d] * params.w2[d * shape.d_hidden + j];
            }
            let dz1t = dz1 * shape.activation.slope_at(st.z1t[j]);
            gb1[j] += dz1t;
            for i in 0..shape.d_in {
                gw1[j * shape.d_in + i] += dz1t * s.x[i];
            }
        }
    }
    let inv = 1.0 / samples.len() as f64;
    let mut flat = Vec::with_capacity(param_count(shape));
    flat.extend(gw1.iter().map(|g| g * inv));
    flat.extend(gb1.iter().map(|g| g * inv));
    flat.extend(gw2.iter().map(|g| g * inv));
    flat.extend(gb2.iter().map(|g| g * inv));
    Ok(flat)
}

fn trace_from_state(
    shape: &NetworkShape,
    params: &NetworkParams,
    x: &[f64],
    p: ParamRef,
    st: &ForwardState,
) -> Result<Vec<PwpFunction>, NnError> {
    p.validate(shape)?;
    let mut traces = Vec::with_capacity(shape.d_out);
    match p.kind {
        ParamKind::W2 | ParamKind::B2 => {
            for d in 0..shape.d_out {
                if d != p.row {
                    traces.push(PwpFunction::affine_of(0.0, st.out[d])?);
                    continue;
                }
                let (slope, current) = match p.kind {
                    ParamKind::W2 => (st.z1[p.col], params.w2[d * shape.d_hidden + p.col]),
                    _ => (1.0, params.b2[d]),
                };
                let frozen = st.out[d] - current * slope;
                traces.push(PwpFunction::affine_of(slope, frozen)?);
            }
        }
        ParamKind::W1 | ParamKind::B1 => {
            let j = p.row;
            // The pre-activation of hidden unit j is affine in theta; every
            // other hidden unit is frozen.
            let (slope, current) = match p.kind {
                ParamKind::W1 => (x[p.col], params.w1[j * shape.d_in + p.col]),
                _ => (1.0, params.b1[j]),
            };
            let base = st.z1t[j] - current * slope;
            let inner = PwpFunction::affine_of(slope, base)?;
            let composed = compose_activation(&shape.activation, &inner)?;
            for d in 0..shape.d_out {
                let w = params.w2[d * shape.d_hidden + j];
                let frozen = st.out[d] - w * st.z1[j];
                traces.push(composed.scale_add(w, frozen)?);
            }
        }
    }
    Ok(traces)
}

/// The network output, one piecewise-linear function per output component, as
/// an exact function of the single parameter `p` with all others frozen.
pub fn output_trace(
    shape: &NetworkShape,
    params: &NetworkParams,
    x: &[f64],
    p: ParamRef,
) -> Result<Vec<PwpFunction>, NnError> {
    if x.len() != shape.d_in {
        return Err(NnError::DimensionMismatch {
            expected: shape.d_in,
            got: x.len(),
        });
    }
    let st = forward_state(shape, params, x);
    trace_from_state(shape, params, x, p, &st)
}

/// The per-sample squared error as an exact piecewise quadratic of `p`.
pub fn build_message(
    shape: &NetworkShape,
    params: &NetworkParams,
    sample: &Sample,
    p: ParamRef,
) -> Result<PwpFunction, NnError> {
    if sample.x.len() != shape.d_in || sample.y.len() != shape.d_out {
        return Err(NnError::DimensionMismatch {
            expected: shape.d_in,
            got: sample.x.len(),
        });
    }
    let st = forward_state(shape, params, &sample.x);
    let traces = trace_from_state(shape, params, &sample.x, p, &st)?;
    let squared: Vec<PwpFunction> = traces
        .iter()
        .zip(&sample.y)
        .map(|(t, &y)| PwpFunction::square_residual(y, t))
        .collect::<Result<_, _>>()?;
    Ok(sum_pwp(&squared)?)
}
