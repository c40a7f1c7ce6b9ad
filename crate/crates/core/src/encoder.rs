//! Fixed-window feed-forward contextual encoder with a hand-written backward
//! pass:
//!
//! ```text
//! c = LN(tanh(x W_in + b)) W_out
//! ```
//!
//! where `x` concatenates the `k` context embeddings. Input embeddings are
//! fixed; no gradient flows into the embedding table.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextKey, Direction, Vocabulary, BOUNDARY};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const INIT_BIAS: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    /// Context window.
    pub k: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.input_dim == 0 || self.hidden == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!("encoder dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.k * self.input_dim * self.hidden + 3 * self.hidden + self.hidden * self.output_dim
    }
}

/// Encoder weights. The same struct holds gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    /// `(k * input_dim) x hidden`
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    /// `hidden x output_dim`
    pub w_out: Array2<f64>,
    pub ln_gain: Array1<f64>,
    pub ln_bias: Array1<f64>,
}

pub const PARAM_NAMES: [&str; 5] = ["w_in", "b_in", "w_out", "ln_gain", "ln_bias"];

impl EncoderParams {
    /// Glorot-uniform weights, unit layer-norm gain, zero layer-norm bias.
    /// The input bias is small and random: with a zero bias an all-zero
    /// input (a window of unrepresented boundary tokens) would make the
    /// hidden layer constant and the normalized context vector exactly 0.
    pub fn init(seed: u64, dims: EncoderDims) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = dims.k * dims.input_dim;
        let limit_in = (6.0 / (fan_in + dims.hidden) as f64).sqrt();
        let w_in = Array2::from_shape_fn((fan_in, dims.hidden), |_| rng.random_range(-limit_in..limit_in));
        let limit_out = (6.0 / (dims.hidden + dims.output_dim) as f64).sqrt();
        let w_out = Array2::from_shape_fn((dims.hidden, dims.output_dim), |_| rng.random_range(-limit_out..limit_out));
        let b_in = Array1::from_shape_fn(dims.hidden, |_| rng.random_range(-INIT_BIAS..INIT_BIAS));
        Ok(EncoderParams {
            dims,
            w_in,
            b_in,
            w_out,
            ln_gain: Array1::ones(dims.hidden),
            ln_bias: Array1::zeros(dims.hidden),
        })
    }

    pub fn zeros(dims: EncoderDims) -> Self {
        EncoderParams {
            dims,
            w_in: Array2::zeros((dims.k * dims.input_dim, dims.hidden)),
            b_in: Array1::zeros(dims.hidden),
            w_out: Array2::zeros((dims.hidden, dims.output_dim)),
            ln_gain: Array1::zeros(dims.hidden),
            ln_bias: Array1::zeros(dims.hidden),
        }
    }

    pub fn param_count(&self) -> usize {
        self.dims.param_count()
    }

    /// Flat views in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            self.w_in.as_slice().expect("standard layout"),
            self.b_in.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            self.ln_gain.as_slice().expect("standard layout"),
            self.ln_bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w_in.as_slice_mut().expect("standard layout"),
            self.b_in.as_slice_mut().expect("standard layout"),
            self.w_out.as_slice_mut().expect("standard layout"),
            self.ln_gain.as_slice_mut().expect("standard layout"),
            self.ln_bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn add_assign(&mut self, other: &EncoderParams) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Runs the encoder on the concatenated context embedding `x`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTape)> {
        let d = self.dims;
        if x.len() != d.k * d.input_dim {
            return Err(Error::Shape(format!("input of length {} for k*m_in = {}", x.len(), d.k * d.input_dim)));
        }
        let mut z = self.b_in.to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                let row = self.w_in.row(i);
                for (zj, &wij) in z.iter_mut().zip(row.iter()) {
                    *zj += xi * wij;
                }
            }
        }
        let act: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let (y, xhat, inv_std) = layer_norm_parts(&act, self.ln_gain.as_slice().unwrap(), self.ln_bias.as_slice().unwrap());
        let mut c = vec![0.0; d.output_dim];
        for (i, &yi) in y.iter().enumerate() {
            let row = self.w_out.row(i);
            for (cj, &w) in c.iter_mut().zip(row.iter()) {
                *cj += yi * w;
            }
        }
        Ok((
            c,
            ForwardTape {
                dims: d,
                input: x.to_vec(),
                act,
                xhat,
                inv_std,
                normed: y,
            },
        ))
    }

    /// Gradients of `L(c)` with respect to every parameter, given `dL/dc`.
    pub fn backward(&self, tape: &ForwardTape, dc: &[f64]) -> Result<EncoderParams> {
        let mut grads = EncoderParams::zeros(self.dims);
        self.backward_into(tape, dc, &mut grads)?;
        Ok(grads)
    }

    /// Like [`EncoderParams::backward`] but accumulates into `grads` and
    /// returns `dL/dx` for the (fixed) input embedding.
    pub fn backward_into(&self, tape: &ForwardTape, dc: &[f64], grads: &mut EncoderParams) -> Result<Vec<f64>> {
        let d = self.dims;
        if tape.dims != d || grads.dims != d {
            return Err(Error::Shape(format!("tape {:?} / grads {:?} vs params {:?}", tape.dims, grads.dims, d)));
        }
        if dc.len() != d.output_dim {
            return Err(Error::Shape(format!("dL/dc of length {} for output dim {}", dc.len(), d.output_dim)));
        }
        let h = d.hidden;

        // c = y W_out
        let mut dy = vec![0.0; h];
        for i in 0..h {
            let yi = tape.normed[i];
            let row = self.w_out.row(i);
            let mut grow = grads.w_out.row_mut(i);
            let mut acc = 0.0;
            for j in 0..d.output_dim {
                grow[j] += yi * dc[j];
                acc += row[j] * dc[j];
            }
            dy[i] = acc;
        }

        // y = xhat * gain + bias
        let mut dxhat = vec![0.0; h];
        for i in 0..h {
            grads.ln_gain[i] += dy[i] * tape.xhat[i];
            grads.ln_bias[i] += dy[i];
            dxhat[i] = dy[i] * self.ln_gain[i];
        }
        let hf = h as f64;
        let mean_dxhat = dxhat.iter().sum::<f64>() / hf;
        let mean_dxhat_xhat = dxhat.iter().zip(&tape.xhat).map(|(a, b)| a * b).sum::<f64>() / hf;

        // act -> xhat, then tanh
        let dz: Vec<f64> = (0..h)
            .map(|i| {
                let da = tape.inv_std * (dxhat[i] - mean_dxhat - tape.xhat[i] * mean_dxhat_xhat);
                da * (1.0 - tape.act[i] * tape.act[i])
            })
            .collect();

        let mut dx = vec![0.0; tape.input.len()];
        for (r, &xr) in tape.input.iter().enumerate() {
            let row = self.w_in.row(r);
            let mut grow = grads.w_in.row_mut(r);
            let mut acc = 0.0;
            for j in 0..h {
                grow[j] += xr * dz[j];
                acc += row[j] * dz[j];
            }
            dx[r] = acc;
        }
        for j in 0..h {
            grads.b_in[j] += dz[j];
        }
        Ok(dx)
    }
}

/// Activations cached by one forward call.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    dims: EncoderDims,
    input: Vec<f64>,
    act: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: f64,
    normed: Vec<f64>,
}

/// `(x - mean) / sqrt(var + eps) * gain + bias`, population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    layer_norm_parts(x, gain, bias).0
}

fn layer_norm_parts(x: &[f64], gain: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let y = xhat.iter().zip(gain).zip(bias).map(|((xh, g), b)| xh * g + b).collect();
    (y, xhat, inv_std)
}

/// Linear warm-up to `base` over `warmup` steps, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: u64,
}

impl LrSchedule {
    /// Learning rate for 1-based step `t`.
    pub fn lr(&self, t: u64) -> f64 {
        if self.warmup == 0 {
            return self.base;
        }
        self.base * (t as f64 / self.warmup as f64).min(1.0)
    }
}

/// `param -= lr * grad` over matching flat tensors. Nothing is written if
/// any gradient entry is non-finite.
pub fn sgd_update(params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Shape("parameter and gradient tensors differ".into()));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient tensor {i} entry {pos} is {}", g[pos])));
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (pi, gi) in p.iter_mut().zip(g.iter()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

pub fn sgd_step(params: &mut EncoderParams, grads: &EncoderParams, lr: f64) -> Result<()> {
    if params.dims != grads.dims {
        return Err(Error::Shape(format!("{:?} vs {:?}", params.dims, grads.dims)));
    }
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    sgd_update(&mut p, &g, lr)
}

/// Sums worker gradients pairwise in a fixed tree order.
pub fn tree_sum(mut shards: Vec<EncoderParams>) -> Result<Option<EncoderParams>> {
    while shards.len() > 1 {
        let mut next = Vec::with_capacity(shards.len().div_ceil(2));
        let mut it = shards.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.add_assign(&b)?;
            }
            next.push(a);
        }
        shards = next;
    }
    Ok(shards.pop())
}

/// Resolves context ids to concatenated input embeddings, caching one
/// vector per word id.
#[derive(Clone, Debug)]
pub struct ContextEmbedder {
    dim: usize,
    word_vectors: Vec<Vec<f64>>,
    boundary: Vec<f64>,
}

impl ContextEmbedder {
    /// Looks up every vocabulary word once. Fails if any word is
    /// unrepresentable.
    pub fn new(table: &EmbeddingTable, vocab: &Vocabulary, direction: Direction) -> Result<Self> {
        let word_vectors = vocab.words().iter().map(|w| table.lookup(w)).collect::<Result<Vec<_>>>()?;
        let boundary = table.lookup(direction.boundary_token())?;
        Ok(ContextEmbedder {
            dim: table.dim(),
            word_vectors,
            boundary,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, context: &ContextKey) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(context.0.len() * self.dim);
        for &id in &context.0 {
            if id == BOUNDARY {
                x.extend_from_slice(&self.boundary);
            } else {
                let v = self.word_vectors.get(id as usize).ok_or(Error::UnknownWord {
                    id: id as usize,
                    vocab: self.word_vectors.len(),
                })?;
                x.extend_from_slice(v);
            }
        }
        Ok(x)
    }
}

/// Encodes a context given as surface strings.
pub fn encode(context: &[&str], params: &EncoderParams, table: &EmbeddingTable) -> Result<(Vec<f64>, ForwardTape)> {
    if context.len() != params.dims.k {
        return Err(Error::Shape(format!("{} context tokens for window {}", context.len(), params.dims.k)));
    }
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut x = Vec::with_capacity(params.dims.k * table.dim());
    for tok in context {
        if !cache.contains_key(tok) {
            cache.insert(tok, table.lookup(tok)?);
        }
        x.extend_from_slice(&cache[tok]);
    }
    params.forward(&x)
}
