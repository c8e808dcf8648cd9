//! Small dense-network kernel over a flat parameter vector: two-layer
//! perceptrons with explicit reverse-mode gradients, Adam updates and a
//! central-difference gradient checker.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities entering a logarithm are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid mapped affinely onto `[PROB_EPS, 1 − PROB_EPS]`. Unlike a clamp it
/// stays strictly monotone, so saturated outputs still receive gradient.
pub fn squash_prob(logit: f64) -> f64 {
    PROB_EPS + (1.0 - 2.0 * PROB_EPS) * sigmoid(logit)
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// −q·ln q − (1−q)·ln(1−q), with 0·ln 0 = 0.
pub fn bernoulli_entropy(q: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(q) + term(1.0 - q)
}

/// Derivative of [`bernoulli_entropy`]: ln((1−q)/q).
pub fn bernoulli_entropy_grad(q: f64) -> f64 {
    ((1.0 - q) / q).ln()
}

#[derive(Debug, Error, PartialEq)]
pub enum NnetError {
    #[error("input has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("duplicate tensor name {0}")]
    DuplicateTensor(String),
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All trainable scalars of a model in one vector, with named tensor views.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    tensors: Vec<TensorInfo>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a zero-filled tensor and returns its offset.
    pub fn add(&mut self, name: &str, shape: &[usize]) -> Result<usize, NnetError> {
        if self.index.contains_key(name) {
            return Err(NnetError::DuplicateTensor(name.to_string()));
        }
        let info = TensorInfo {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.values.len(),
        };
        self.values.resize(self.values.len() + info.len(), 0.0);
        self.index.insert(name.to_string(), self.tensors.len());
        let offset = info.offset;
        self.tensors.push(info);
        Ok(offset)
    }

    /// Registers a tensor filled uniformly in ±`bound`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<usize, NnetError> {
        let offset = self.add(name, shape)?;
        let n: usize = shape.iter().product();
        if bound > 0.0 {
            for v in &mut self.values[offset..offset + n] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(offset)
    }

    /// A dense layer `in_dim -> out_dim` with Xavier-uniform weights and zero bias.
    pub fn add_dense<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<DenseLayer, NnetError> {
        let bound = (6.0 / (in_dim + out_dim).max(1) as f64).sqrt();
        let w = self.add_uniform(&format!("{name}.w"), &[out_dim, in_dim], bound, rng)?;
        let b = self.add(&format!("{name}.b"), &[out_dim])?;
        Ok(DenseLayer { w, b, in_dim, out_dim })
    }

    pub fn add_mlp2<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Mlp2, NnetError> {
        let l1 = self.add_dense(&format!("{name}.l1"), in_dim, hidden, rng)?;
        let l2 = self.add_dense(&format!("{name}.l2"), hidden, out_dim, rng)?;
        Ok(Mlp2 { l1, l2 })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.tensor(name).map(|t| &self.values[t.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.tensor(name)?.range();
        Some(&mut self.values[range])
    }

    /// Named tensors with their values, in registration order.
    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.tensors
            .iter()
            .map(|t| NamedTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                values: self.values[t.range()].to_vec(),
            })
            .collect()
    }

    /// Overwrites values from named tensors; names and shapes must match.
    pub fn load_named(&mut self, tensors: &[NamedTensor]) -> Result<(), NnetError> {
        if tensors.len() != self.tensors.len() {
            return Err(NnetError::Checkpoint(format!(
                "{} tensors in checkpoint, model has {}",
                tensors.len(),
                self.tensors.len()
            )));
        }
        for t in tensors {
            let info = self
                .tensor(&t.name)
                .ok_or_else(|| NnetError::UnknownTensor(t.name.clone()))?
                .clone();
            if info.shape != t.shape || t.values.len() != info.len() {
                return Err(NnetError::ShapeMismatch {
                    name: t.name.clone(),
                    expected: info.shape,
                    found: t.shape.clone(),
                });
            }
            self.values[info.range()].copy_from_slice(&t.values);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// `y = W·x + b` with `W` stored row-major (out × in) at offset `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayer {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    pub fn num_params(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }

    pub fn forward_into(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        let w = &params[self.w..self.w + self.in_dim * self.out_dim];
        let b = &params[self.b..self.b + self.out_dim];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            *yo = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grads` and input gradients into `dx`.
    pub fn backward_into(&self, params: &[f64], x: &[f64], dy: &[f64], grads: &mut [f64], dx: &mut [f64]) {
        let n = self.in_dim;
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads[self.b + o] += g;
            let gw = &mut grads[self.w + o * n..self.w + (o + 1) * n];
            for (gwi, xi) in gw.iter_mut().zip(x) {
                *gwi += g * xi;
            }
            let row = &params[self.w + o * n..self.w + (o + 1) * n];
            for (dxi, wi) in dx.iter_mut().zip(row) {
                *dxi += g * wi;
            }
        }
    }
}

/// `y = W2·relu(W1·x + b1) + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp2 {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
}

/// Activations kept by [`Mlp2::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2Tape {
    pub x: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl Mlp2 {
    pub fn in_dim(&self) -> usize {
        self.l1.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.l1.num_params() + self.l2.num_params()
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, Mlp2Tape), NnetError> {
        if x.len() != self.l1.in_dim {
            return Err(NnetError::Dimension {
                expected: self.l1.in_dim,
                found: x.len(),
            });
        }
        let mut pre = vec![0.0; self.l1.out_dim];
        self.l1.forward_into(params, x, &mut pre);
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut y = vec![0.0; self.l2.out_dim];
        self.l2.forward_into(params, &hidden, &mut y);
        Ok((
            y,
            Mlp2Tape {
                x: x.to_vec(),
                pre,
                hidden,
            },
        ))
    }

    /// Forward without keeping a tape.
    pub fn apply(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>, NnetError> {
        self.forward(params, x).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient.
    pub fn backward(&self, params: &[f64], tape: &Mlp2Tape, dy: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut dh = vec![0.0; self.l1.out_dim];
        self.l2.backward_into(params, &tape.hidden, dy, grads, &mut dh);
        for (g, &p) in dh.iter_mut().zip(&tape.pre) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        let mut dx = vec![0.0; self.l1.in_dim];
        self.l1.backward_into(params, &tape.x, &dh, grads, &mut dx);
        dx
    }
}

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One descent step `params -= lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            let m = b1 * self.m[i] + (1.0 - b1) * g;
            let v = b2 * self.v[i] + (1.0 - b2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            if m != 0.0 {
                params[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    state.step(params, grads, lr);
}

/// Largest relative error between the analytic gradient returned by `f` and
/// central differences with step `h`, over the parameters listed in `indices`
/// (all parameters when `None`). The denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut f: F, params: &[f64], h: f64, indices: Option<&[usize]>) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut theta = params.to_vec();
    let mut worst: f64 = 0.0;
    for &i in idx {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta).0;
        theta[i] = orig - h;
        let minus = f(&theta).0;
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
