use std::collections::HashSet;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_batch, check_dims, LayerKind, OutputLayer, ParamGrads};
use crate::error::{Error, Result};
use crate::real::{axpy, dot, log_sum_exp, Real};

/// Negative word ids with the log of their expected inclusion count, which
/// is subtracted from each negative's logit.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSample {
    pub ids: Vec<usize>,
    pub log_expected: Vec<f64>,
}

impl NegativeSample {
    /// Every id in `0..vocab` except `exclude`, uncorrected.
    pub fn exhaustive(vocab: usize, exclude: &HashSet<usize>) -> Self {
        let ids: Vec<usize> = (0..vocab).filter(|w| !exclude.contains(w)).collect();
        let log_expected = vec![0.0; ids.len()];
        NegativeSample { ids, log_expected }
    }
}

pub trait NegativeSampler: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Draws `n` distinct ids outside `exclude`. When `n` covers every
    /// remaining word the whole remainder is returned with no correction.
    fn sample(&self, n: usize, exclude: &HashSet<usize>, rng: &mut ChaCha8Rng) -> NegativeSample;
}

/// Log-uniform (Zipfian) proposal over frequency ranks:
/// `Q(r) = log((r + 2) / (r + 1)) / log(V + 1)`.
#[derive(Clone, Debug)]
pub struct LogUniformSampler {
    id_of_rank: Vec<usize>,
    rank_of_id: Vec<usize>,
}

impl LogUniformSampler {
    /// `id_of_rank[r]` is the word id with frequency rank `r`.
    pub fn new(id_of_rank: Vec<usize>) -> Result<Self> {
        let v = id_of_rank.len();
        let mut rank_of_id = vec![usize::MAX; v];
        for (r, &id) in id_of_rank.iter().enumerate() {
            if id >= v || rank_of_id[id] != usize::MAX {
                return Err(Error::Config("rank table is not a permutation".into()));
            }
            rank_of_id[id] = r;
        }
        Ok(LogUniformSampler { id_of_rank, rank_of_id })
    }

    /// Ranks equal ids.
    pub fn identity(vocab: usize) -> Self {
        Self::new((0..vocab).collect()).expect("identity is a permutation")
    }

    pub fn probability(&self, id: usize) -> f64 {
        let r = self.rank_of_id[id] as f64;
        ((r + 2.0) / (r + 1.0)).ln() / ((self.id_of_rank.len() + 1) as f64).ln()
    }
}

impl NegativeSampler for LogUniformSampler {
    fn vocab_size(&self) -> usize {
        self.id_of_rank.len()
    }

    fn sample(&self, n: usize, exclude: &HashSet<usize>, rng: &mut ChaCha8Rng) -> NegativeSample {
        let v = self.id_of_rank.len();
        let available = v - exclude.iter().filter(|&&w| w < v).count();
        if n >= available {
            return NegativeSample::exhaustive(v, exclude);
        }
        let log_range = ((v + 1) as f64).ln();
        let mut chosen = Vec::with_capacity(n);
        let mut seen = HashSet::with_capacity(n);
        let mut tries = 0u64;
        while chosen.len() < n {
            tries += 1;
            let u: f64 = rng.random();
            let rank = (((u * log_range).exp() as usize).saturating_sub(1)).min(v - 1);
            let id = self.id_of_rank[rank];
            if !exclude.contains(&id) && seen.insert(id) {
                chosen.push(id);
            }
        }
        // Inclusion probability of id after `tries` draws with rejection of
        // duplicates: 1 - (1 - Q)^tries.
        let log_expected = chosen
            .iter()
            .map(|&id| {
                let q = self.probability(id);
                (-((tries as f64) * (-q).ln_1p()).exp_m1()).ln()
            })
            .collect();
        NegativeSample { ids: chosen, log_expected }
    }
}

/// Uniform proposal over the words outside `exclude`, drawn without
/// replacement.
#[derive(Clone, Debug)]
pub struct UniformSampler {
    vocab: usize,
}

impl UniformSampler {
    pub fn new(vocab: usize) -> Self {
        UniformSampler { vocab }
    }
}

impl NegativeSampler for UniformSampler {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn sample(&self, n: usize, exclude: &HashSet<usize>, rng: &mut ChaCha8Rng) -> NegativeSample {
        let pool: Vec<usize> = (0..self.vocab).filter(|w| !exclude.contains(w)).collect();
        if n >= pool.len() {
            return NegativeSample::exhaustive(self.vocab, exclude);
        }
        let ids: Vec<usize> = rand::seq::index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
        // every remaining word is included with probability n / |pool|
        let log_pi = (n as f64 / pool.len() as f64).ln();
        NegativeSample {
            log_expected: vec![log_pi; ids.len()],
            ids,
        }
    }
}

/// Softmax restricted to the target plus `negatives`, with each negative's
/// logit lowered by its log expected count. Only the rows of `w` for the
/// target and the negatives receive gradient.
pub fn sampled_softmax_loss<T: Real>(
    c: &[T],
    target: usize,
    w: &[T],
    negatives: &NegativeSample,
    dc: &mut [T],
    dw: Option<&mut [T]>,
) -> Result<T> {
    let m = c.len();
    let v = w.len() / m;
    check_dims(c, dc, m)?;
    if target >= v {
        return Err(Error::UnknownWord { id: target, vocab: v });
    }
    if negatives.ids.len() != negatives.log_expected.len() {
        return Err(Error::Shape("negative ids and corrections differ in length".into()));
    }
    if let Some(&bad) = negatives.ids.iter().find(|&&id| id >= v || id == target) {
        return Err(Error::Config(format!("negative {bad} is the target or out of range")));
    }
    let row = |id: usize| &w[id * m..(id + 1) * m];
    let mut logits = Vec::with_capacity(negatives.ids.len() + 1);
    logits.push(dot(row(target), c));
    for (&id, &corr) in negatives.ids.iter().zip(&negatives.log_expected) {
        logits.push(dot(row(id), c) - T::from_f64_lossy(corr));
    }
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[0];
    dc.iter_mut().for_each(|x| *x = T::zero());
    let mut dw = dw;
    for (j, &l) in logits.iter().enumerate() {
        let id = if j == 0 { target } else { negatives.ids[j - 1] };
        let mut g = (l - lse).exp();
        if j == 0 {
            g -= T::one();
        }
        axpy(g, row(id), dc);
        if let Some(dw) = dw.as_deref_mut() {
            axpy(g, c, &mut dw[id * m..(id + 1) * m]);
        }
    }
    Ok(loss)
}

/// Sampled softmax with one negative sample shared by each batch.
pub struct SampledSoftmax<T> {
    vocab: usize,
    dim: usize,
    weights: Vec<T>,
    n_negatives: usize,
    sampler: Box<dyn NegativeSampler>,
    rng: Mutex<ChaCha8Rng>,
}

impl<T> std::fmt::Debug for SampledSoftmax<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledSoftmax")
            .field("vocab", &self.vocab)
            .field("dim", &self.dim)
            .field("n_negatives", &self.n_negatives)
            .finish_non_exhaustive()
    }
}

impl<T: Real> SampledSoftmax<T> {
    pub fn new(weights: Vec<T>, vocab: usize, dim: usize, n_negatives: usize, sampler: Box<dyn NegativeSampler>, seed: u64) -> Result<Self> {
        if vocab == 0 || dim == 0 || weights.len() != vocab * dim {
            return Err(Error::Shape(format!("{} weights for V={vocab} m={dim}", weights.len())));
        }
        if sampler.vocab_size() != vocab {
            return Err(Error::Config("sampler vocabulary differs from layer vocabulary".into()));
        }
        if n_negatives == 0 {
            return Err(Error::Config("sampled softmax needs at least one negative".into()));
        }
        Ok(SampledSoftmax {
            vocab,
            dim,
            weights,
            n_negatives,
            sampler,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn random(vocab: usize, dim: usize, n_negatives: usize, sampler: Box<dyn NegativeSampler>, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..vocab * dim).map(|_| T::from_f64_lossy(rng.random_range(-scale..scale))).collect();
        Self::new(weights, vocab, dim, n_negatives, sampler, seed.wrapping_add(1))
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn n_negatives(&self) -> usize {
        self.n_negatives
    }

    /// Sampled rows per example: the target plus the shared negatives.
    fn rows_per_example(&self) -> u64 {
        self.n_negatives.min(self.vocab - 1) as u64 + 1
    }

    fn draw(&self, exclude: &HashSet<usize>) -> NegativeSample {
        let mut rng = self.rng.lock().expect("sampler rng poisoned");
        self.sampler.sample(self.n_negatives, exclude, &mut rng)
    }
}

impl<T: Real> OutputLayer<T> for SampledSoftmax<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Sampled
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

    /// Same per-row costs as the full softmax, over `n + 1` rows.
    fn flop_count(&self, batch: usize) -> u64 {
        let rows = self.rows_per_example();
        batch as u64 * (6 * rows * self.dim as u64 + 5 * rows)
    }

    /// Sparse payload: touched rows plus one 8-byte index each.
    fn grad_payload_bytes(&self, batch: usize) -> u64 {
        let rows = (self.n_negatives + batch).min(self.vocab) as u64;
        rows * (self.dim * std::mem::size_of::<T>() + 8) as u64
    }

    fn memory_bytes(&self, batch: usize) -> u64 {
        let t = std::mem::size_of::<T>() as u64;
        2 * (self.weights.len() as u64) * t + (batch as u64) * self.rows_per_example() * t
    }

    fn new_grads(&self) -> ParamGrads<T> {
        ParamGrads::zeros(&[self.weights.len()])
    }

    fn loss_and_grad(&self, c: &[T], target: usize, dc: &mut [T], grads: &mut ParamGrads<T>) -> Result<T> {
        let negatives = self.draw(&HashSet::from([target]));
        let dw = grads.tensors.get_mut(0).map(Vec::as_mut_slice);
        sampled_softmax_loss(c, target, &self.weights, &negatives, dc, dw)
    }

    fn batch_loss_and_grad(&self, cs: &[T], targets: &[usize], dcs: &mut [T], grads: &mut ParamGrads<T>) -> Result<T> {
        let m = self.dim;
        check_batch(cs, targets, dcs, m)?;
        let exclude: HashSet<usize> = targets.iter().copied().collect();
        let negatives = self.draw(&exclude);
        let mut total = T::zero();
        for ((c, dc), &t) in cs.chunks_exact(m).zip(dcs.chunks_exact_mut(m)).zip(targets) {
            let dw = grads.tensors.get_mut(0).map(Vec::as_mut_slice);
            total += sampled_softmax_loss(c, t, &self.weights, &negatives, dc, dw)?;
        }
        Ok(total)
    }

    /// The full softmax over the same weights; sampling is a training-time
    /// approximation only.
    fn log_prob(&self, c: &[T], target: usize) -> Result<T> {
        if target >= self.vocab {
            return Err(Error::UnknownWord { id: target, vocab: self.vocab });
        }
        let logits: Vec<T> = self.weights.chunks_exact(self.dim).map(|row| dot(row, c)).collect();
        Ok(logits[target] - log_sum_exp(&logits))
    }

    fn params(&self) -> Vec<(String, &[T])> {
        vec![("sampled.weights".into(), self.weights.as_slice())]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.weights.as_mut_slice()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::full_softmax_loss;

    fn random_vec(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn exhaustive_uniform_sampling_equals_full_softmax() {
        let (v, m) = (30, 5);
        let w = random_vec(v * m, 1, 1.0);
        let c = random_vec(m, 2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let neg = UniformSampler::new(v).sample(v - 1, &HashSet::from([7]), &mut rng);
        assert_eq!(neg.ids.len(), v - 1);
        let mut dc1 = vec![0.0; m];
        let mut dc2 = vec![0.0; m];
        let a = sampled_softmax_loss(&c, 7, &w, &neg, &mut dc1, None).unwrap();
        let b = full_softmax_loss(&c, 7, &w, &mut dc2, None).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_hopeless_negative_gives_zero_loss() {
        let w = vec![1.0, -1e6];
        let neg = NegativeSample {
            ids: vec![1],
            log_expected: vec![0.0],
        };
        let mut dc = vec![0.0];
        let loss = sampled_softmax_loss(&[1.0f64], 0, &w, &neg, &mut dc, None).unwrap();
        assert!(loss.abs() < 1e-300);
    }

    #[test]
    fn only_sampled_rows_get_gradient() {
        let (v, m) = (50, 4);
        let w = random_vec(v * m, 3, 1.0);
        let c = random_vec(m, 4, 1.0);
        let sampler = LogUniformSampler::identity(v);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let neg = sampler.sample(6, &HashSet::from([10]), &mut rng);
        assert_eq!(neg.ids.len(), 6);
        assert!(!neg.ids.contains(&10));
        let mut dw = vec![0.0; v * m];
        let mut dc = vec![0.0; m];
        sampled_softmax_loss(&c, 10, &w, &neg, &mut dc, Some(&mut dw)).unwrap();
        for id in 0..v {
            let touched = dw[id * m..(id + 1) * m].iter().any(|&x| x != 0.0);
            assert_eq!(touched, id == 10 || neg.ids.contains(&id), "row {id}");
        }
    }

    #[test]
    fn target_among_negatives_is_rejected() {
        let neg = NegativeSample {
            ids: vec![0],
            log_expected: vec![0.0],
        };
        let mut dc = vec![0.0];
        assert!(sampled_softmax_loss(&[1.0f64], 0, &[1.0, 2.0], &neg, &mut dc, None).is_err());
    }

    #[test]
    fn log_uniform_probabilities_sum_to_one() {
        let s = LogUniformSampler::identity(1000);
        let total: f64 = (0..1000).map(|i| s.probability(i)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(s.probability(0) > s.probability(1));
    }

    #[test]
    fn log_uniform_empirical_frequencies() {
        let v = 20;
        let s = LogUniformSampler::identity(v);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut hits = vec![0usize; v];
        let draws = 200_000;
        for _ in 0..draws {
            let neg = s.sample(1, &HashSet::new(), &mut rng);
            hits[neg.ids[0]] += 1;
        }
        for id in 0..v {
            let freq = hits[id] as f64 / draws as f64;
            assert!((freq - s.probability(id)).abs() < 0.005, "id {id}: {freq}");
        }
    }

    #[test]
    fn oversized_request_falls_back_to_exhaustive() {
        let s = LogUniformSampler::identity(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let neg = s.sample(10, &HashSet::from([3]), &mut rng);
        assert_eq!(neg.ids.len(), 9);
        assert!(neg.log_expected.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn layer_is_deterministic_per_seed() {
        let mk = || SampledSoftmax::<f64>::random(40, 3, 5, Box::new(LogUniformSampler::identity(40)), 0.5, 9).unwrap();
        let (a, b) = (mk(), mk());
        let c = [0.1, 0.2, -0.3];
        let mut d1 = vec![0.0; 3];
        let mut d2 = vec![0.0; 3];
        let la = a.loss_and_grad(&c, 4, &mut d1, &mut a.new_grads()).unwrap();
        let lb = b.loss_and_grad(&c, 4, &mut d2, &mut b.new_grads()).unwrap();
        assert_eq!(la, lb);
        assert_eq!(d1, d2);
    }
}
