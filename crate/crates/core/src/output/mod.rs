//! Interchangeable output layers behind one contract: given a context vector
//! and a target word, return the loss, the gradient with respect to the
//! context vector, and gradients for whatever trainable parameters the layer
//! owns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

mod adaptive;
pub mod bessel;
mod sampled;
mod semfit;
mod softmax;

pub use adaptive::{AdaptiveSoftmax, AdaptiveSoftmaxConfig};
pub use sampled::{sampled_softmax_loss, LogUniformSampler, NegativeSample, NegativeSampler, SampledSoftmax, UniformSampler};
pub use semfit::{semfit_cosine, semfit_l2, semfit_nllvmf, Distance, SemFit, TargetTable, COSINE_FIXED_FLOPS, L2_FIXED_FLOPS, MIN_CONTEXT_NORM, NLLVMF_FIXED_FLOPS};
pub use softmax::{full_softmax_loss, FullSoftmax};

/// Gradients for a layer's trainable tensors, in the order of
/// [`OutputLayer::params`]. Empty for layers without parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros(sizes: &[usize]) -> Self {
        ParamGrads {
            tensors: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn clear(&mut self) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|x| *x = T::zero());
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Softmax,
    Sampled,
    Adaptive,
    Semfit,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Softmax => "softmax",
            LayerKind::Sampled => "sampled",
            LayerKind::Adaptive => "adaptive",
            LayerKind::Semfit => "semfit",
        }
    }

    /// Whether the layer defines a normalized distribution over the
    /// vocabulary.
    pub fn is_normalized(self) -> bool {
        !matches!(self, LayerKind::Semfit)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(LayerKind::Softmax),
            "sampled" => Ok(LayerKind::Sampled),
            "adaptive" => Ok(LayerKind::Adaptive),
            "semfit" => Ok(LayerKind::Semfit),
            other => Err(Error::Config(format!("unknown output layer kind {other:?}"))),
        }
    }
}

pub trait OutputLayer<T: Real>: Send + Sync {
    fn kind(&self) -> LayerKind;

    /// Context-vector dimension.
    fn dim(&self) -> usize;

    fn vocab_size(&self) -> usize;

    fn trainable_param_count(&self) -> usize;

    /// Deterministic floating-point operation count for one forward and
    /// backward pass over `batch` examples.
    fn flop_count(&self, batch: usize) -> u64;

    /// Bytes of trainable-parameter gradient produced per batch.
    fn grad_payload_bytes(&self, _batch: usize) -> u64 {
        (self.trainable_param_count() * std::mem::size_of::<T>()) as u64
    }

    /// Bytes held by the layer (parameters, gradient buffers, fixed tables)
    /// plus per-batch workspace.
    fn memory_bytes(&self, batch: usize) -> u64;

    fn new_grads(&self) -> ParamGrads<T> {
        ParamGrads::default()
    }

    /// Loss for one example. Writes `dL/dc` into `dc` and adds parameter
    /// gradients into `grads`.
    fn loss_and_grad(&self, c: &[T], target: usize, dc: &mut [T], grads: &mut ParamGrads<T>) -> Result<T>;

    /// Summed loss over a batch of row-major context vectors.
    fn batch_loss_and_grad(&self, cs: &[T], targets: &[usize], dcs: &mut [T], grads: &mut ParamGrads<T>) -> Result<T> {
        let m = self.dim();
        check_batch(cs, targets, dcs, m)?;
        let mut total = T::zero();
        for ((c, dc), &t) in cs.chunks_exact(m).zip(dcs.chunks_exact_mut(m)).zip(targets) {
            total += self.loss_and_grad(c, t, dc, grads)?;
        }
        Ok(total)
    }

    /// `log p(target | c)` for layers that define a normalized distribution.
    fn log_prob(&self, _c: &[T], _target: usize) -> Result<T> {
        Err(Error::PerplexityUndefined)
    }

    /// Named trainable tensors.
    fn params(&self) -> Vec<(String, &[T])> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        Vec::new()
    }
}

pub(crate) fn check_batch<T>(cs: &[T], targets: &[usize], dcs: &[T], m: usize) -> Result<()> {
    if cs.len() != targets.len() * m || dcs.len() != cs.len() {
        return Err(Error::Shape(format!(
            "batch of {} targets with {} context values and {} gradient slots (dim {m})",
            targets.len(),
            cs.len(),
            dcs.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_dims<T>(c: &[T], dc: &[T], m: usize) -> Result<()> {
    if c.len() != m || dc.len() != m {
        return Err(Error::Shape(format!(
            "context of length {} and gradient of length {} for dim {m}",
            c.len(),
            dc.len()
        )));
    }
    Ok(())
}

/// `param -= lr * grad` for every trainable tensor of `layer`.
pub fn apply_sgd<T: Real, L: OutputLayer<T> + ?Sized>(layer: &mut L, grads: &ParamGrads<T>, lr: T) -> Result<()> {
    let mut params = layer.params_mut();
    if params.len() != grads.tensors.len() || params.iter().zip(&grads.tensors).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Shape("output-layer gradients do not match parameters".into()));
    }
    for g in &grads.tensors {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("output-layer gradient".into()));
        }
    }
    for (p, g) in params.iter_mut().zip(&grads.tensors) {
        for (pi, &gi) in p.iter_mut().zip(g) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

/// Exact distribution over the vocabulary for normalized layers.
pub fn full_distribution<T: Real, L: OutputLayer<T> + ?Sized>(layer: &L, c: &[T]) -> Result<Vec<T>> {
    (0..layer.vocab_size()).map(|w| layer.log_prob(c, w).map(T::exp)).collect()
}
