//! Single-hidden-layer classifier trained locally by each user.
//!
//! Parameters live in one flat [`ParamVector`] laid out as
//! `[W1 (input x hidden, row-major), b1, W2 (hidden x classes, row-major), b2]`.
//! The hidden layer uses a logistic sigmoid and the output a softmax with
//! cross-entropy loss. All reductions run in a fixed order, so results are
//! bit-stable for identical inputs.

use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{LabeledDataset, NUM_CLASSES};
use crate::rng::StreamRng;

pub const INPUT_DIM: usize = 784;
const CHECKPOINT_MAGIC: &[u8; 8] = b"TTFEDMLP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Architecture {
    pub fn mnist(hidden: usize) -> Self {
        Self { input: INPUT_DIM, hidden, output: NUM_CLASSES }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.input * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.output;
        [w1, b1, w2, b2]
    }
}

/// Flat model parameters shared by every aggregation rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &ParamVector) {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> ParamVector {
        Self(self.0.iter().map(|v| scale * v).collect())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.len() == other.len() && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, local_epochs: 1, batch_size: 32, hidden_width: 50 }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &Architecture, rng: &mut StreamRng) -> ParamVector {
    let [w1, b1, w2, b2] = arch.offsets();
    let mut values = vec![0.0; arch.param_count()];
    let limit1 = (6.0 / (arch.input + arch.hidden) as f64).sqrt();
    let limit2 = (6.0 / (arch.hidden + arch.output) as f64).sqrt();
    for v in &mut values[w1..b1] {
        *v = rng.random_range(-limit1..limit1);
    }
    for v in &mut values[w2..b2] {
        *v = rng.random_range(-limit2..limit2);
    }
    ParamVector(values)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// In-place softmax; returns `ln(sum(exp(logits)))`.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Forward pass for one sample. Fills `hidden` and `logits`.
fn forward(arch: &Architecture, w: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
    let [_, b1, w2, b2] = arch.offsets();
    let h = arch.hidden;
    hidden.copy_from_slice(&w[b1..b1 + h]);
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            let row = &w[i * h..(i + 1) * h];
            for (acc, &wij) in hidden.iter_mut().zip(row) {
                *acc += xi * wij;
            }
        }
    }
    for v in hidden.iter_mut() {
        *v = sigmoid(*v);
    }
    logits.copy_from_slice(&w[b2..b2 + arch.output]);
    for (j, &hj) in hidden.iter().enumerate() {
        let row = &w[w2 + j * arch.output..w2 + (j + 1) * arch.output];
        for (acc, &wjc) in logits.iter_mut().zip(row) {
            *acc += hj * wjc;
        }
    }
}

/// Class logits for one input.
pub fn predict_logits(arch: &Architecture, w: &ParamVector, x: &[f64]) -> Vec<f64> {
    let mut hidden = vec![0.0; arch.hidden];
    let mut logits = vec![0.0; arch.output];
    forward(arch, w.as_slice(), x, &mut hidden, &mut logits);
    logits
}

/// Mean cross-entropy and its gradient over the samples `batch` of `data`.
pub fn loss_and_gradient(
    arch: &Architecture,
    w: &ParamVector,
    data: &LabeledDataset,
    batch: &[usize],
) -> (f64, ParamVector) {
    assert!(!batch.is_empty(), "empty batch");
    assert_eq!(w.len(), arch.param_count(), "parameter length mismatch");
    let [_, b1, w2, b2] = arch.offsets();
    let (h, out) = (arch.hidden, arch.output);
    let wv = w.as_slice();
    let mut grad = vec![0.0; arch.param_count()];
    let mut hidden = vec![0.0; h];
    let mut probs = vec![0.0; out];
    let mut delta_hidden = vec![0.0; h];
    let mut loss = 0.0;

    for &i in batch {
        let x = data.image(i);
        let y = data.label(i);
        forward(arch, wv, x, &mut hidden, &mut probs);
        let log_norm = softmax_in_place(&mut probs);
        // -log softmax_y, recovered from the pre-softmax logit.
        let logit_y = {
            let mut z = wv[b2 + y];
            for (j, &hj) in hidden.iter().enumerate() {
                z += hj * wv[w2 + j * out + y];
            }
            z
        };
        loss += log_norm - logit_y;

        probs[y] -= 1.0;
        let delta_out = &probs;
        for (g, &d) in grad[b2..b2 + out].iter_mut().zip(delta_out) {
            *g += d;
        }
        for j in 0..h {
            let row = w2 + j * out;
            let mut back = 0.0;
            for c in 0..out {
                grad[row + c] += hidden[j] * delta_out[c];
                back += wv[row + c] * delta_out[c];
            }
            delta_hidden[j] = back * hidden[j] * (1.0 - hidden[j]);
        }
        for (g, &d) in grad[b1..b1 + h].iter_mut().zip(&delta_hidden) {
            *g += d;
        }
        for (k, &xk) in x.iter().enumerate() {
            if xk != 0.0 {
                for (g, &d) in grad[k * h..(k + 1) * h].iter_mut().zip(&delta_hidden) {
                    *g += xk * d;
                }
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    (loss * scale, ParamVector(grad))
}

/// `local_epochs` passes of mini-batch SGD over `shard`, starting from `w_in`.
///
/// Each epoch shuffles the shard with `rng`. When one batch covers the whole
/// shard the original order is kept, so a single epoch is exactly
/// `w_in - lr * grad(w_in)`.
pub fn local_update(
    arch: &Architecture,
    w_in: &ParamVector,
    data: &LabeledDataset,
    shard: &[usize],
    cfg: &TrainConfig,
    rng: &mut StreamRng,
) -> ParamVector {
    assert!(!shard.is_empty(), "empty shard");
    let mut w = w_in.clone();
    if cfg.learning_rate == 0.0 {
        return w;
    }
    let mut order = shard.to_vec();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.local_epochs {
        if batch < order.len() {
            order.shuffle(rng);
        }
        for chunk in order.chunks(batch) {
            let (_, grad) = loss_and_gradient(arch, &w, data, chunk);
            w.add_scaled(-cfg.learning_rate, &grad);
        }
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Test accuracy (argmax, ties to the lowest class) and mean cross-entropy.
pub fn evaluate(arch: &Architecture, w: &ParamVector, test: &LabeledDataset) -> Evaluation {
    assert!(!test.is_empty(), "empty test set");
    let mut hidden = vec![0.0; arch.hidden];
    let mut logits = vec![0.0; arch.output];
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..test.len() {
        forward(arch, w.as_slice(), test.image(i), &mut hidden, &mut logits);
        let y = test.label(i);
        if argmax_lowest(&logits) == y {
            correct += 1;
        }
        let logit_y = logits[y];
        loss += softmax_in_place(&mut logits) - logit_y;
    }
    Evaluation { accuracy: correct as f64 / test.len() as f64, loss: loss / test.len() as f64 }
}

/// Writes `magic, input, hidden, output (u32 LE), then f64 LE values`.
pub fn write_checkpoint<W: Write>(out: &mut W, arch: &Architecture, w: &ParamVector) -> io::Result<()> {
    if w.len() != arch.param_count() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "parameter length mismatch"));
    }
    out.write_all(CHECKPOINT_MAGIC)?;
    for dim in [arch.input, arch.hidden, arch.output] {
        let dim = u32::try_from(dim).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        out.write_all(&dim.to_le_bytes())?;
    }
    for v in w.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> io::Result<(Architecture, ParamVector)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not a parameter checkpoint"));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let arch = Architecture { input: dims[0], hidden: dims[1], output: dims[2] };
    let mut values = Vec::with_capacity(arch.param_count());
    let mut b = [0u8; 8];
    for _ in 0..arch.param_count() {
        input.read_exact(&mut b)?;
        values.push(f64::from_le_bytes(b));
    }
    Ok((arch, ParamVector(values)))
}
