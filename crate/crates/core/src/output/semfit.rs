use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bessel::{bessel_ratio, log_cm};
use super::{check_dims, LayerKind, OutputLayer, ParamGrads};
use crate::embedding::{normalize, Composition, EmbeddingTable};
use crate::error::{Error, Result};
use crate::real::{dot, Real};

/// Below this norm the direction of `c` is treated as undefined.
pub const MIN_CONTEXT_NORM: f64 = 1e-8;

// Flop counts per example, one flop per scalar add, multiply, divide or
// square root. The dimension-dependent parts are:
//   L2      diff m, square-accumulate 2m, gradient m          -> 4m
//   cosine  c.c 2m, c.w 2m, dc = a c - b w 3m                 -> 7m
//   NLLvMF  c.c 2m, c.w 2m, dc = a c - l2 w 3m                -> 7m
// plus the scalar work below. The NLLvMF constant is a nominal budget for
// one log-Bessel evaluation and one continued fraction.
pub const L2_FIXED_FLOPS: u64 = 0;
pub const COSINE_FIXED_FLOPS: u64 = 8;
pub const NLLVMF_FIXED_FLOPS: u64 = 64;

/// `||c - w||^2`, with `dc = 2 (c - w)`.
pub fn semfit_l2<T: Real>(c: &[T], w: &[T], dc: &mut [T]) -> Result<T> {
    check_dims(c, dc, w.len())?;
    let two = T::one() + T::one();
    let mut loss = T::zero();
    for ((g, &ci), &wi) in dc.iter_mut().zip(c).zip(w) {
        let d = ci - wi;
        loss += d * d;
        *g = two * d;
    }
    Ok(loss)
}

/// `-(c / ||c||) . w` for unit `w`, with `dc = -(w - (c_bar . w) c_bar) / ||c||`.
pub fn semfit_cosine<T: Real>(c: &[T], w: &[T], dc: &mut [T]) -> Result<T> {
    check_dims(c, dc, w.len())?;
    let n = dot(c, c).sqrt();
    if !(n.as_f64() > MIN_CONTEXT_NORM) {
        if !n.is_finite() {
            return Err(Error::NonFinite("context vector".into()));
        }
        return Err(Error::DegenerateContext(n.as_f64()));
    }
    let inv = n.recip();
    let s = dot(c, w) * inv;
    let a = s * inv * inv;
    for ((g, &ci), &wi) in dc.iter_mut().zip(c).zip(w) {
        *g = a * ci - inv * wi;
    }
    Ok(-s)
}

/// `-log C_m(||c||) - lambda2 c.w + lambda1 ||c||` for unit `w`, with
/// `dc = (R_m(||c||) + lambda1) c_bar - lambda2 w` and
/// `R_m(k) = I_{m/2}(k) / I_{m/2-1}(k)`. Evaluated in `f64`.
pub fn semfit_nllvmf<T: Real>(c: &[T], w: &[T], lambda1: f64, lambda2: f64, dc: &mut [T]) -> Result<T> {
    let m = w.len();
    check_dims(c, dc, m)?;
    let k = dot(c, c).as_f64().sqrt();
    if !k.is_finite() {
        return Err(Error::NonFinite("context vector".into()));
    }
    if !(k > 0.0) {
        return Err(Error::DegenerateContext(k));
    }
    let cw = dot(c, w).as_f64();
    let loss = -log_cm(k, m)? - lambda2 * cw + lambda1 * k;
    let r = bessel_ratio(m as f64 / 2.0 - 1.0, k)?;
    let a = T::from_f64_lossy((r + lambda1) / k);
    let l2 = T::from_f64_lossy(lambda2);
    for ((g, &ci), &wi) in dc.iter_mut().zip(c).zip(w) {
        *g = a * ci - l2 * wi;
    }
    Ok(T::from_f64_lossy(loss))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distance", rename_all = "lowercase")]
pub enum Distance {
    L2,
    Cosine,
    #[serde(rename = "nllvmf")]
    NllVmf { lambda1: f64, lambda2: f64 },
}

impl Distance {
    pub const DEFAULT_LAMBDA1: f64 = 0.02;
    pub const DEFAULT_LAMBDA2: f64 = 1.0;

    pub fn nllvmf_default() -> Self {
        Distance::NllVmf {
            lambda1: Self::DEFAULT_LAMBDA1,
            lambda2: Self::DEFAULT_LAMBDA2,
        }
    }

    /// Whether targets are stored at unit norm.
    pub fn needs_unit_targets(self) -> bool {
        !matches!(self, Distance::L2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Distance::L2 => "l2",
            Distance::Cosine => "cosine",
            Distance::NllVmf { .. } => "nllvmf",
        }
    }

    pub fn validate(self) -> Result<()> {
        if let Distance::NllVmf { lambda1, lambda2 } = self {
            if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
                return Err(Error::Config(format!("NLLvMF weights must be finite and non-negative, got {lambda1}, {lambda2}")));
            }
        }
        Ok(())
    }

    pub fn flops_per_example(self, dim: usize) -> u64 {
        let m = dim as u64;
        match self {
            Distance::L2 => 4 * m + L2_FIXED_FLOPS,
            Distance::Cosine => 7 * m + COSINE_FIXED_FLOPS,
            Distance::NllVmf { .. } => 7 * m + NLLVMF_FIXED_FLOPS,
        }
    }

    pub fn loss<T: Real>(self, c: &[T], w: &[T], dc: &mut [T]) -> Result<T> {
        match self {
            Distance::L2 => semfit_l2(c, w, dc),
            Distance::Cosine => semfit_cosine(c, w, dc),
            Distance::NllVmf { lambda1, lambda2 } => semfit_nllvmf(c, w, lambda1, lambda2, dc),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `l2`, `cosine` or `nllvmf` (with default weights).
impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Distance::L2),
            "cosine" => Ok(Distance::Cosine),
            "nllvmf" => Ok(Distance::nllvmf_default()),
            other => Err(Error::Config(format!("unknown SemFit distance {other:?}"))),
        }
    }
}

/// Fixed target vectors, one row per word id, row-major `V x m`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetTable<T> {
    vocab: usize,
    dim: usize,
    data: Vec<T>,
    unit: bool,
}

impl<T: Real> TargetTable<T> {
    pub fn new(data: Vec<T>, vocab: usize, dim: usize, unit: bool) -> Result<Self> {
        if vocab == 0 || dim == 0 || data.len() != vocab * dim {
            return Err(Error::Shape(format!("{} target values for V={vocab} m={dim}", data.len())));
        }
        Ok(TargetTable { vocab, dim, data, unit })
    }

    /// Looks every word up in `table`. Words missing from the table are
    /// composed from their subwords; with `unit` each row is normalized and
    /// a zero row is an error.
    pub fn from_embeddings<S: AsRef<str>>(table: &EmbeddingTable, words: &[S], composition: Composition, unit: bool) -> Result<Self> {
        let dim = table.dim();
        let mut data = Vec::with_capacity(words.len() * dim);
        for w in words {
            let v = table.lookup_with(w.as_ref(), composition)?;
            let v = if unit { normalize(v)? } else { v };
            data.extend(v.into_iter().map(T::from_f64_lossy));
        }
        Self::new(data, words.len(), dim, unit)
    }

    /// Gaussian rows, normalized when `unit`.
    pub fn random(vocab: usize, dim: usize, unit: bool, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(vocab * dim);
        let mut row = vec![0.0f64; dim];
        for _ in 0..vocab {
            row.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
            if unit {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                row.iter_mut().for_each(|x| *x /= n);
            }
            data.extend(row.iter().map(|&x| T::from_f64_lossy(x)));
        }
        Self::new(data, vocab, dim, unit)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_unit(&self) -> bool {
        self.unit
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, id: usize) -> Result<&[T]> {
        if id >= self.vocab {
            return Err(Error::UnknownWord { id, vocab: self.vocab });
        }
        Ok(&self.data[id * self.dim..(id + 1) * self.dim])
    }
}

/// Regresses the context vector onto a fixed target embedding. No
/// trainable parameters and no normalization over the vocabulary, so the
/// per-example cost depends on `m` only.
#[derive(Clone, Debug)]
pub struct SemFit<T> {
    distance: Distance,
    targets: TargetTable<T>,
}

impl<T: Real> SemFit<T> {
    pub fn new(distance: Distance, targets: TargetTable<T>) -> Result<Self> {
        distance.validate()?;
        if distance.needs_unit_targets() && !targets.is_unit() {
            return Err(Error::Config(format!("{distance} distance needs unit-norm targets")));
        }
        Ok(SemFit { distance, targets })
    }

    pub fn distance(&self) -> Distance {
        self.distance
    }

    pub fn targets(&self) -> &TargetTable<T> {
        &self.targets
    }

    /// `1 - cos(c, w_target)`, reported for every distance so runs are
    /// comparable.
    pub fn cosine_distance(&self, c: &[T], target: usize) -> Result<f64> {
        let w = self.targets.row(target)?;
        let cn = dot(c, c).as_f64().sqrt();
        let wn = dot(w, w).as_f64().sqrt();
        if !(cn > MIN_CONTEXT_NORM) || wn == 0.0 {
            return Err(Error::DegenerateContext(cn));
        }
        Ok(1.0 - dot(c, w).as_f64() / (cn * wn))
    }
}

impl<T: Real> OutputLayer<T> for SemFit<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Semfit
    }

    fn dim(&self) -> usize {
        self.targets.dim
    }

    fn vocab_size(&self) -> usize {
        self.targets.vocab
    }

    fn trainable_param_count(&self) -> usize {
        0
    }

    fn flop_count(&self, batch: usize) -> u64 {
        batch as u64 * self.distance.flops_per_example(self.targets.dim)
    }

    fn grad_payload_bytes(&self, _batch: usize) -> u64 {
        0
    }

    fn memory_bytes(&self, batch: usize) -> u64 {
        let t = std::mem::size_of::<T>() as u64;
        (self.targets.data.len() + batch * self.targets.dim) as u64 * t
    }

    fn loss_and_grad(&self, c: &[T], target: usize, dc: &mut [T], _grads: &mut ParamGrads<T>) -> Result<T> {
        let w = self.targets.row(target)?;
        self.distance.loss(c, w, dc)
    }
}
