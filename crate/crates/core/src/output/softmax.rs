use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_batch, check_dims, LayerKind, OutputLayer, ParamGrads};
use crate::error::{Error, Result};
use crate::real::{axpy, dot, log_sum_exp, Real};

/// `-c.w_t + log sum_w exp(c.w)` for one example. Writes `dL/dc` and adds
/// `(p(w|c) - [w = t]) c` to each row of `dw` (row-major `V x m`).
pub fn full_softmax_loss<T: Real>(c: &[T], target: usize, w: &[T], dc: &mut [T], dw: Option<&mut [T]>) -> Result<T> {
    let m = c.len();
    let v = w.len() / m;
    if target >= v {
        return Err(Error::UnknownWord { id: target, vocab: v });
    }
    check_dims(c, dc, m)?;
    let logits: Vec<T> = w.chunks_exact(m).map(|row| dot(row, c)).collect();
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[target];
    dc.iter_mut().for_each(|x| *x = T::zero());
    let mut dw = dw;
    for (i, (row, &l)) in w.chunks_exact(m).zip(&logits).enumerate() {
        let mut g = (l - lse).exp();
        if i == target {
            g -= T::one();
        }
        axpy(g, row, dc);
        if let Some(dw) = dw.as_deref_mut() {
            axpy(g, c, &mut dw[i * m..(i + 1) * m]);
        }
    }
    Ok(loss)
}

/// Softmax over the full vocabulary with a trainable `V x m` output matrix
/// and no bias.
#[derive(Clone, Debug)]
pub struct FullSoftmax<T> {
    vocab: usize,
    dim: usize,
    weights: Vec<T>,
}

impl<T: Real> FullSoftmax<T> {
    pub fn new(weights: Vec<T>, vocab: usize, dim: usize) -> Result<Self> {
        if vocab == 0 || dim == 0 || weights.len() != vocab * dim {
            return Err(Error::Shape(format!("{} weights for V={vocab} m={dim}", weights.len())));
        }
        Ok(FullSoftmax { vocab, dim, weights })
    }

    /// Uniform weights in `[-scale, scale)`.
    pub fn random(vocab: usize, dim: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..vocab * dim).map(|_| T::from_f64_lossy(rng.random_range(-scale..scale))).collect();
        Self::new(weights, vocab, dim)
    }

    pub fn zeros(vocab: usize, dim: usize) -> Result<Self> {
        Self::new(vec![T::zero(); vocab * dim], vocab, dim)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    /// Flops per example: logits `2Vm`, softmax `5V` (max, subtract, exp,
    /// accumulate, scale), `dc` and `dW` accumulation `2Vm` each.
    pub fn flops_per_example(vocab: usize, dim: usize) -> u64 {
        let (v, m) = (vocab as u64, dim as u64);
        6 * v * m + 5 * v
    }
}

impl<T: Real> OutputLayer<T> for FullSoftmax<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Softmax
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn trainable_param_count(&self) -> usize {
        self.vocab * self.dim
    }

    fn flop_count(&self, batch: usize) -> u64 {
        batch as u64 * Self::flops_per_example(self.vocab, self.dim)
    }

    fn memory_bytes(&self, batch: usize) -> u64 {
        let t = std::mem::size_of::<T>() as u64;
        // weights, dense gradient, batch logits
        (2 * self.weights.len() as u64 + (batch * self.vocab) as u64) * t
    }

    fn new_grads(&self) -> ParamGrads<T> {
        ParamGrads::zeros(&[self.weights.len()])
    }

    fn loss_and_grad(&self, c: &[T], target: usize, dc: &mut [T], grads: &mut ParamGrads<T>) -> Result<T> {
        let dw = grads.tensors.get_mut(0).map(Vec::as_mut_slice);
        full_softmax_loss(c, target, &self.weights, dc, dw)
    }

    /// Streams over the weight matrix twice per batch (logits, then
    /// gradients) instead of twice per example.
    fn batch_loss_and_grad(&self, cs: &[T], targets: &[usize], dcs: &mut [T], grads: &mut ParamGrads<T>) -> Result<T> {
        let m = self.dim;
        let v = self.vocab;
        check_batch(cs, targets, dcs, m)?;
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::UnknownWord { id: bad, vocab: v });
        }
        let b = targets.len();
        let mut logits = vec![T::zero(); b * v];
        for (w_idx, row) in self.weights.chunks_exact(m).enumerate() {
            for (e, c) in cs.chunks_exact(m).enumerate() {
                logits[e * v + w_idx] = dot(row, c);
            }
        }
        let mut total = T::zero();
        for (e, &t) in targets.iter().enumerate() {
            let l = &mut logits[e * v..(e + 1) * v];
            let lse = log_sum_exp(l);
            total += lse - l[t];
            for x in l.iter_mut() {
                *x = (*x - lse).exp();
            }
            l[t] -= T::one();
        }
        dcs.iter_mut().for_each(|x| *x = T::zero());
        let dw = grads.tensors.get_mut(0);
        match dw {
            Some(dw) => {
                for (w_idx, (row, drow)) in self.weights.chunks_exact(m).zip(dw.chunks_exact_mut(m)).enumerate() {
                    for (e, (c, dc)) in cs.chunks_exact(m).zip(dcs.chunks_exact_mut(m)).enumerate() {
                        let g = logits[e * v + w_idx];
                        axpy(g, row, dc);
                        axpy(g, c, drow);
                    }
                }
            }
            None => {
                for (w_idx, row) in self.weights.chunks_exact(m).enumerate() {
                    for (e, dc) in dcs.chunks_exact_mut(m).enumerate() {
                        axpy(logits[e * v + w_idx], row, dc);
                    }
                }
            }
        }
        Ok(total)
    }

    fn log_prob(&self, c: &[T], target: usize) -> Result<T> {
        if target >= self.vocab {
            return Err(Error::UnknownWord { id: target, vocab: self.vocab });
        }
        let logits: Vec<T> = self.weights.chunks_exact(self.dim).map(|row| dot(row, c)).collect();
        Ok(logits[target] - log_sum_exp(&logits))
    }

    fn params(&self) -> Vec<(String, &[T])> {
        vec![("softmax.weights".into(), self.weights.as_slice())]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.weights.as_mut_slice()]
    }
}
