//! One-dimensional convolutional autoencoder over `4 × m` trial tensors.
//!
//! Encoder: conv(k=3, same) → dropout → conv(k=3, same) → dropout →
//! maxpool(2). Decoder: nearest-neighbor upsample(2) → conv(c2→c1) →
//! conv(c1→4), trimmed back to `m`. Activations are linear unless
//! [`AEHyper::relu`] is set, in which case ReLU follows every hidden conv.
//! Training minimizes mean absolute error with Adam; gradients are computed
//! by hand-written backpropagation.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::SampleTensor;
use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, AeError>;

pub const KERNEL: usize = 3;
pub const POOL: usize = 2;
pub const DROPOUT_P: f64 = 0.1;
pub const IN_CHANNELS: usize = 4;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AEHyper {
    pub conv_window: usize,
    pub dropout_p: f64,
    pub pool_window: usize,
    /// Widths of the two encoder convolutions.
    pub channels: (usize, usize),
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub relu: bool,
}

impl AEHyper {
    pub fn new(c1: usize, c2: usize, learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            conv_window: KERNEL,
            dropout_p: DROPOUT_P,
            pool_window: POOL,
            channels: (c1, c2),
            learning_rate,
            epochs,
            batch_size,
            seed,
            relu: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_window != KERNEL || self.pool_window != POOL {
            return Err(AeError::BadHyper(format!(
                "architecture fixed at conv window {KERNEL} and pool window {POOL}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(AeError::BadHyper(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        if self.channels.0 == 0 || self.channels.1 == 0 || self.batch_size == 0 {
            return Err(AeError::BadHyper("channels and batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(AeError::BadHyper(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// The default search grid: c1, c2 ∈ {4, 8}, lr ∈ {1e-2, 1e-3},
/// epochs ∈ {200, 500}, batch 8.
pub fn default_grid(seed: u64) -> Vec<AEHyper> {
    let mut grid = Vec::new();
    for c1 in [4, 8] {
        for c2 in [4, 8] {
            for lr in [1e-2, 1e-3] {
                for epochs in [200, 500] {
                    grid.push(AEHyper::new(c1, c2, lr, epochs, 8, seed));
                }
            }
        }
    }
    grid
}

/// `out × in × 3` kernel plus one bias per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub out_ch: usize,
    pub in_ch: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(out_ch: usize, in_ch: usize) -> Self {
        Self { out_ch, in_ch, weight: vec![0.0; out_ch * in_ch * KERNEL], bias: vec![0.0; out_ch] }
    }

    fn uniform<R: Rng>(out_ch: usize, in_ch: usize, rng: &mut R) -> Self {
        let bound = (1.0 / (in_ch * KERNEL) as f64).sqrt();
        let mut layer = Self::zeros(out_ch, in_ch);
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.random_range(-bound..=bound);
        }
        layer
    }

    #[inline]
    fn w(&self, o: usize, i: usize, j: usize) -> f64 {
        self.weight[(o * self.in_ch + i) * KERNEL + j]
    }

    /// Zero-padded "same" convolution of an `in_ch × m` input.
    fn forward(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.out_ch * m];
        for o in 0..self.out_ch {
            let yo = &mut y[o * m..(o + 1) * m];
            yo.fill(self.bias[o]);
            for i in 0..self.in_ch {
                let xi = &x[i * m..(i + 1) * m];
                // tap j reads x[t + j - 1]
                let (w0, w1, w2) = (self.w(o, i, 0), self.w(o, i, 1), self.w(o, i, 2));
                for t in 0..m {
                    yo[t] += w1 * xi[t];
                }
                for t in 1..m {
                    yo[t] += w0 * xi[t - 1];
                }
                for t in 0..m - 1 {
                    yo[t] += w2 * xi[t + 1];
                }
            }
        }
        y
    }

    /// Accumulate parameter gradients into `grad`; returns the input
    /// gradient when `want_dx` is set.
    fn backward(&self, x: &[f64], dy: &[f64], m: usize, grad: &mut Conv1d, want_dx: bool) -> Option<Vec<f64>> {
        let mut dx = want_dx.then(|| vec![0.0; self.in_ch * m]);
        for o in 0..self.out_ch {
            let dyo = &dy[o * m..(o + 1) * m];
            grad.bias[o] += dyo.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let xi = &x[i * m..(i + 1) * m];
                let base = (o * self.in_ch + i) * KERNEL;
                let mut g0 = 0.0;
                let mut g1 = 0.0;
                let mut g2 = 0.0;
                for t in 0..m {
                    g1 += dyo[t] * xi[t];
                }
                for t in 1..m {
                    g0 += dyo[t] * xi[t - 1];
                }
                for t in 0..m - 1 {
                    g2 += dyo[t] * xi[t + 1];
                }
                grad.weight[base] += g0;
                grad.weight[base + 1] += g1;
                grad.weight[base + 2] += g2;
                if let Some(dx) = dx.as_mut() {
                    let dxi = &mut dx[i * m..(i + 1) * m];
                    let (w0, w1, w2) = (self.weight[base], self.weight[base + 1], self.weight[base + 2]);
                    for t in 0..m {
                        dxi[t] += w1 * dyo[t];
                    }
                    for t in 1..m {
                        dxi[t - 1] += w0 * dyo[t];
                    }
                    for t in 0..m - 1 {
                        dxi[t + 1] += w2 * dyo[t];
                    }
                }
            }
        }
        dx
    }
}

/// Encoder convolutions and their mirrored decoder counterparts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AEParams {
    /// 4 → c1
    pub enc1: Conv1d,
    /// c1 → c2
    pub enc2: Conv1d,
    /// c2 → c1
    pub dec1: Conv1d,
    /// c1 → 4
    pub dec2: Conv1d,
}

impl AEParams {
    pub fn zeros(c1: usize, c2: usize) -> Self {
        Self {
            enc1: Conv1d::zeros(c1, IN_CHANNELS),
            enc2: Conv1d::zeros(c2, c1),
            dec1: Conv1d::zeros(c1, c2),
            dec2: Conv1d::zeros(IN_CHANNELS, c1),
        }
    }

    /// Uniform in ±sqrt(1 / fan_in) for weights and biases.
    pub fn init(c1: usize, c2: usize, seed: u64) -> Self {
        let mut rng = seeds::rng(seed);
        Self {
            enc1: Conv1d::uniform(c1, IN_CHANNELS, &mut rng),
            enc2: Conv1d::uniform(c2, c1, &mut rng),
            dec1: Conv1d::uniform(c1, c2, &mut rng),
            dec2: Conv1d::uniform(IN_CHANNELS, c1, &mut rng),
        }
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.enc1.out_ch, self.enc2.out_ch)
    }

    pub fn zeros_like(&self) -> Self {
        let (c1, c2) = self.channels();
        Self::zeros(c1, c2)
    }

    fn layers(&self) -> [&Conv1d; 4] {
        [&self.enc1, &self.enc2, &self.dec1, &self.dec2]
    }

    fn layers_mut(&mut self) -> [&mut Conv1d; 4] {
        [&mut self.enc1, &mut self.enc2, &mut self.dec1, &mut self.dec2]
    }

    /// Named tensors in checkpoint order with their declared shapes.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        const NAMES: [(&str, &str); 4] =
            [("enc1.weight", "enc1.bias"), ("enc2.weight", "enc2.bias"), ("dec1.weight", "dec1.bias"), ("dec2.weight", "dec2.bias")];
        let mut out = Vec::with_capacity(8);
        for (layer, (wn, bn)) in self.layers().into_iter().zip(NAMES) {
            out.push((wn, vec![layer.out_ch, layer.in_ch, KERNEL], layer.weight.as_slice()));
            out.push((bn, vec![layer.out_ch], layer.bias.as_slice()));
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(8);
        for layer in self.layers_mut() {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn flat(&self) -> Vec<&[f64]> {
        self.layers().into_iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.flat().iter().map(|t| t.len()).sum()
    }

    fn check_shapes(&self) -> Result<()> {
        let (c1, c2) = self.channels();
        let expect = [(c1, IN_CHANNELS), (c2, c1), (c1, c2), (IN_CHANNELS, c1)];
        for (layer, (o, i)) in self.layers().into_iter().zip(expect) {
            if layer.out_ch != o
                || layer.in_ch != i
                || layer.weight.len() != o * i * KERNEL
                || layer.bias.len() != o
            {
                return Err(AeError::ShapeMismatch(format!(
                    "layer {}x{} does not mirror the encoder (expected {o}x{i})",
                    layer.out_ch, layer.in_ch
                )));
            }
        }
        Ok(())
    }
}

/// Dropout behavior for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Deterministic, dropout disabled.
    Eval,
    /// Dropout masks drawn from a generator seeded with `seed`.
    Train { seed: u64, p: f64 },
}

/// Latent length for a series of `m` frames: `ceil(m / 2)`.
pub fn pooled_len(m: usize) -> usize {
    m.div_ceil(POOL)
}

struct Trace {
    h1: Vec<f64>,
    d1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    h2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    argmax: Vec<usize>,
    z: Vec<f64>,
    u: Vec<f64>,
    h3: Vec<f64>,
    a3: Vec<f64>,
    y: Vec<f64>,
}

fn activate(v: &mut [f64], relu: bool) {
    if relu {
        for x in v {
            *x = x.max(0.0);
        }
    }
}

fn relu_grad(d: &mut [f64], pre: &[f64], relu: bool) {
    if relu {
        for (g, &h) in d.iter_mut().zip(pre) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
    }
}

fn dropout_mask<R: Rng>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

/// Max over non-overlapping pairs; a trailing odd element pools alone.
fn maxpool(x: &[f64], channels: usize, m: usize) -> (Vec<f64>, Vec<usize>) {
    let len = pooled_len(m);
    let mut z = Vec::with_capacity(channels * len);
    let mut arg = Vec::with_capacity(channels * len);
    for c in 0..channels {
        let row = &x[c * m..(c + 1) * m];
        for l in 0..len {
            let a = POOL * l;
            let idx = if a + 1 < m && row[a + 1] > row[a] { a + 1 } else { a };
            z.push(row[idx]);
            arg.push(c * m + idx);
        }
    }
    (z, arg)
}

/// Nearest-neighbor repeat to `2 * len`, trimmed to `m`.
fn upsample(z: &[f64], channels: usize, m: usize) -> Vec<f64> {
    let len = pooled_len(m);
    let mut u = Vec::with_capacity(channels * m);
    for c in 0..channels {
        for t in 0..m {
            u.push(z[c * len + t / POOL]);
        }
    }
    u
}

fn forward_trace(params: &AEParams, x: &[f64], m: usize, mode: Mode, relu: bool, rng: Option<&mut rand_chacha::ChaCha8Rng>) -> Trace {
    let (c1, c2) = params.channels();
    let mut h1 = params.enc1.forward(x, m);
    let mut d1 = h1.clone();
    activate(&mut d1, relu);
    let (mask1, mask2) = match (mode, rng) {
        (Mode::Train { p, .. }, Some(rng)) => {
            let m1 = dropout_mask(c1 * m, p, rng);
            let m2 = dropout_mask(c2 * m, p, rng);
            (Some(m1), Some(m2))
        }
        _ => (None, None),
    };
    if let Some(mask) = &mask1 {
        for (v, k) in d1.iter_mut().zip(mask) {
            *v *= k;
        }
    }
    let h2 = params.enc2.forward(&d1, m);
    let mut d2 = h2.clone();
    activate(&mut d2, relu);
    if let Some(mask) = &mask2 {
        for (v, k) in d2.iter_mut().zip(mask) {
            *v *= k;
        }
    }
    let (z, argmax) = maxpool(&d2, c2, m);
    let u = upsample(&z, c2, m);
    let h3 = params.dec1.forward(&u, m);
    let mut a3 = h3.clone();
    activate(&mut a3, relu);
    let y = params.dec2.forward(&a3, m);
    // keep h1 only when the ReLU derivative needs it
    if !relu {
        h1 = Vec::new();
    }
    Trace { h1, d1, mask1, h2, mask2, argmax, z, u, h3, a3, y }
}

/// Accumulate the gradient of `scale · Σ|y − x|` for one sample.
fn backward_trace(params: &AEParams, x: &[f64], tr: &Trace, m: usize, scale: f64, relu: bool, grad: &mut AEParams) {
    let (c1, c2) = params.channels();
    let dy: Vec<f64> = tr
        .y
        .iter()
        .zip(x)
        .map(|(&y, &t)| {
            let d = y - t;
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    let mut da3 = params.dec2.backward(&tr.a3, &dy, m, &mut grad.dec2, true).expect("dx requested");
    relu_grad(&mut da3, &tr.h3, relu);
    let du = params.dec1.backward(&tr.u, &da3, m, &mut grad.dec1, true).expect("dx requested");
    let len = pooled_len(m);
    let mut dd2 = vec![0.0; c2 * m];
    for c in 0..c2 {
        for t in 0..m {
            dd2[tr.argmax[c * len + t / POOL]] += du[c * m + t];
        }
    }
    if let Some(mask) = &tr.mask2 {
        for (g, k) in dd2.iter_mut().zip(mask) {
            *g *= k;
        }
    }
    relu_grad(&mut dd2, &tr.h2, relu);
    let mut dd1 = params.enc2.backward(&tr.d1, &dd2, m, &mut grad.enc2, true).expect("dx requested");
    if let Some(mask) = &tr.mask1 {
        for (g, k) in dd1.iter_mut().zip(mask) {
            *g *= k;
        }
    }
    relu_grad(&mut dd1, &tr.h1, relu);
    debug_assert_eq!(dd1.len(), c1 * m);
    params.enc1.backward(x, &dd1, m, &mut grad.enc1, false);
}

fn check_input(params: &AEParams, x: &[f64], m: usize) -> Result<()> {
    params.check_shapes()?;
    if m < 2 {
        return Err(AeError::ShapeMismatch(format!("series length {m} < 2")));
    }
    if x.len() != IN_CHANNELS * m {
        return Err(AeError::ShapeMismatch(format!("sample has {} values, expected 4 x {m}", x.len())));
    }
    Ok(())
}

/// One forward pass. Returns the flattened `c2 × ceil(m/2)` latent and the
/// `4 × m` reconstruction.
pub fn ae_forward(params: &AEParams, x: &[f64], m: usize, mode: Mode, relu: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    check_input(params, x, m)?;
    let mut rng = match mode {
        Mode::Train { seed, .. } => Some(seeds::rng(seed)),
        Mode::Eval => None,
    };
    let tr = forward_trace(params, x, m, mode, relu, rng.as_mut());
    Ok((tr.z, tr.y))
}

/// Mean absolute elementwise difference.
pub fn ae_loss(recon: &[f64], x: &[f64]) -> Result<f64> {
    if recon.len() != x.len() {
        return Err(AeError::ShapeMismatch(format!("{} vs {}", recon.len(), x.len())));
    }
    if x.is_empty() {
        return Err(AeError::EmptyInput);
    }
    Ok(recon.iter().zip(x).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

/// Mean loss over the batch and its analytic gradient. In train mode the
/// dropout masks for every sample come from one generator seeded by the mode.
pub fn ae_gradient(params: &AEParams, batch: &SampleTensor, mode: Mode, relu: bool) -> Result<(f64, AEParams)> {
    if batch.n == 0 {
        return Err(AeError::EmptyInput);
    }
    if batch.channels != IN_CHANNELS {
        return Err(AeError::ShapeMismatch(format!("{} channels, expected 4", batch.channels)));
    }
    let m = batch.m;
    let mut rng = match mode {
        Mode::Train { seed, .. } => Some(seeds::rng(seed)),
        Mode::Eval => None,
    };
    let mut grad = params.zeros_like();
    let count = (batch.n * IN_CHANNELS * m) as f64;
    let mut loss = 0.0;
    for s in 0..batch.n {
        let x = batch.sample(s);
        check_input(params, x, m)?;
        let tr = forward_trace(params, x, m, mode, relu, rng.as_mut());
        loss += tr.y.iter().zip(x).map(|(a, b)| (a - b).abs()).sum::<f64>();
        backward_trace(params, x, &tr, m, 1.0 / count, relu, &mut grad);
    }
    Ok((loss / count, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: AEParams,
    pub v: AEParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &AEParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (already incremented).
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = BETA1 * *mi + (1.0 - BETA1) * g;
        *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

pub fn adam_step(params: &mut AEParams, grads: &AEParams, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t;
    let gs = grads.flat();
    let ms = state.m.flat_mut();
    let vs = state.v.flat_mut();
    for (((p, g), m), v) in params.flat_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        adam_update(p, g, m, v, t, lr);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedAutoencoder {
    pub hyper: AEHyper,
    pub params: AEParams,
    /// Eval-mode mean loss over the training set after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Mean eval-mode reconstruction error over every sample.
pub fn eval_loss(params: &AEParams, data: &SampleTensor, relu: bool) -> Result<f64> {
    if data.n == 0 {
        return Err(AeError::EmptyInput);
    }
    let mut total = 0.0;
    for s in 0..data.n {
        let (_, recon) = ae_forward(params, data.sample(s), data.m, Mode::Eval, relu)?;
        total += ae_loss(&recon, data.sample(s))?;
    }
    Ok(total / data.n as f64)
}

/// Mini-batch Adam training. Shuffling, dropout and initialization all
/// derive from `hyper.seed`.
pub fn train_autoencoder(data: &SampleTensor, hyper: &AEHyper) -> Result<TrainedAutoencoder> {
    hyper.validate()?;
    if data.n == 0 {
        return Err(AeError::EmptyInput);
    }
    if data.channels != IN_CHANNELS || data.m < 2 {
        return Err(AeError::ShapeMismatch(format!("tensor {:?}", data.shape())));
    }
    let (c1, c2) = hyper.channels;
    let mut params = AEParams::init(c1, c2, seeds::derive_named(hyper.seed, "init"));
    let mut state = AdamState::new(&params);
    let mut shuffle_rng = seeds::rng(seeds::derive_named(hyper.seed, "shuffle"));
    let dropout_seed = seeds::derive_named(hyper.seed, "dropout");
    let mut order: Vec<usize> = (0..data.n).collect();
    let mut loss_curve = Vec::with_capacity(hyper.epochs);
    let mut step = 0u64;
    for _ in 0..hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(hyper.batch_size) {
            let batch = data.select(chunk);
            let mode = Mode::Train { seed: seeds::derive(dropout_seed, step), p: hyper.dropout_p };
            let (_, grad) = ae_gradient(&params, &batch, mode, hyper.relu)?;
            adam_step(&mut params, &grad, &mut state, hyper.learning_rate);
            step += 1;
        }
        loss_curve.push(eval_loss(&params, data, hyper.relu)?);
    }
    Ok(TrainedAutoencoder { hyper: hyper.clone(), params, loss_curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCandidate {
    pub hyper: AEHyper,
    pub holdout_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    /// Winning configuration, carrying the seed it was trained with.
    pub best: AEHyper,
    pub candidates: Vec<GridCandidate>,
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
}

/// Train every configuration on a seeded train split and keep the one with
/// the lowest eval-mode holdout MAE. Ties go to the smaller `c1 + c2`, then
/// the lower learning rate, then grid order. Candidate `i` trains with seed
/// `seed ^ i`, so results do not depend on the thread count.
pub fn grid_search_ae(data: &SampleTensor, grid: &[AEHyper], holdout_fraction: f64, seed: u64) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(AeError::EmptyGrid);
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(AeError::BadHyper(format!("holdout fraction {holdout_fraction}")));
    }
    if data.n < 2 {
        return Err(AeError::EmptyInput);
    }
    let mut order: Vec<usize> = (0..data.n).collect();
    order.shuffle(&mut seeds::rng(seeds::derive_named(seed, "holdout")));
    let holdout = ((data.n as f64 * holdout_fraction).round() as usize).clamp(1, data.n - 1);
    let mut holdout_indices = order[..holdout].to_vec();
    let mut train_indices = order[holdout..].to_vec();
    holdout_indices.sort_unstable();
    train_indices.sort_unstable();
    let train = data.select(&train_indices);
    let test = data.select(&holdout_indices);

    let candidates = grid
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let hyper = AEHyper { seed: seed ^ i as u64, ..h.clone() };
            let trained = train_autoencoder(&train, &hyper)?;
            let holdout_mae = eval_loss(&trained.params, &test, hyper.relu)?;
            Ok(GridCandidate { hyper, holdout_mae })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = candidates
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.holdout_mae
                .total_cmp(&b.holdout_mae)
                .then((a.hyper.channels.0 + a.hyper.channels.1).cmp(&(b.hyper.channels.0 + b.hyper.channels.1)))
                .then(a.hyper.learning_rate.total_cmp(&b.hyper.learning_rate))
                .then(ia.cmp(ib))
        })
        .map(|(_, c)| c.hyper.clone())
        .expect("grid nonempty");
    Ok(GridSearchResult { best, candidates, train_indices, holdout_indices })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementVector {
    pub trial_id: String,
    pub values: Vec<f64>,
}

/// Eval-mode encoder output for every sample, in order.
pub fn encode(params: &AEParams, data: &SampleTensor, trial_ids: &[String], relu: bool) -> Result<Vec<MovementVector>> {
    if trial_ids.len() != data.n {
        return Err(AeError::ShapeMismatch(format!("{} ids for {} samples", trial_ids.len(), data.n)));
    }
    (0..data.n)
        .map(|s| {
            let (latent, _) = ae_forward(params, data.sample(s), data.m, Mode::Eval, relu)?;
            Ok(MovementVector { trial_id: trial_ids[s].clone(), values: latent })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON checkpoint: hyperparameters, seed and every parameter tensor in
/// row-major order with its declared shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub hyper: AEHyper,
    pub seed: u64,
    pub m: usize,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(hyper: &AEHyper, params: &AEParams, m: usize) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor { name: name.into(), shape, data: data.to_vec() })
            .collect();
        Self { hyper: hyper.clone(), seed: hyper.seed, m, tensors }
    }

    pub fn params(&self) -> Result<AEParams> {
        let (c1, c2) = self.hyper.channels;
        let mut params = AEParams::zeros(c1, c2);
        let expected: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, s, _)| (n.to_string(), s)).collect();
        if expected.len() != self.tensors.len() {
            return Err(AeError::Checkpoint(format!("expected {} tensors, found {}", expected.len(), self.tensors.len())));
        }
        for ((slot, (name, shape)), t) in params.flat_mut().into_iter().zip(expected).zip(&self.tensors) {
            if t.name != name || t.shape != shape || t.data.len() != slot.len() {
                return Err(AeError::Checkpoint(format!("tensor {} has unexpected name or shape", t.name)));
            }
            slot.copy_from_slice(&t.data);
        }
        Ok(params)
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self).map_err(|e| AeError::Checkpoint(e.to_string()))
    }

    pub fn load<R: Read>(src: R) -> Result<Self> {
        serde_json::from_reader(src).map_err(|e| AeError::Checkpoint(e.to_string()))
    }
}
