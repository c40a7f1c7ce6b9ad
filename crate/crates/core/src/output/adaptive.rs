use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dims, LayerKind, OutputLayer, ParamGrads};
use crate::error::{Error, Result};
use crate::real::{axpy, dot, log_sum_exp, Real};

/// Partition of frequency ranks into a head short-list and tail clusters.
///
/// `cutoffs[0]` is the head size; tail cluster `i` covers ranks
/// `cutoffs[i-1]..cutoffs[i]`. `divisors[i]` shrinks the context fed to
/// partition `i` from `m` to `m / divisors[i]` dimensions; the head is never
/// projected, so `divisors[0]` must be 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptiveSoftmaxConfig {
    pub cutoffs: Vec<usize>,
    pub divisors: Vec<usize>,
}

pub const DEFAULT_HEAD_FRACTION: f64 = 0.2;
pub const DEFAULT_HEAD_CAP: usize = 20_000;
pub const DEFAULT_TAIL_SPLIT: f64 = 0.8;
pub const DEFAULT_DIVISORS: [usize; 3] = [1, 4, 16];

impl AdaptiveSoftmaxConfig {
    /// Head = most frequent 20% of the vocabulary capped at 20,000 words;
    /// the rest splits into two clusters at the 80th rank percentile, with
    /// divisors 4 and 16. Empty clusters are dropped.
    pub fn default_policy(vocab: usize) -> Self {
        let head = ((vocab as f64 * DEFAULT_HEAD_FRACTION) as usize).clamp(1, DEFAULT_HEAD_CAP).min(vocab);
        let split = (vocab as f64 * DEFAULT_TAIL_SPLIT) as usize;
        let mut cutoffs = vec![head];
        if split > head && split < vocab {
            cutoffs.push(split);
        }
        if *cutoffs.last().unwrap() < vocab {
            cutoffs.push(vocab);
        }
        let divisors = DEFAULT_DIVISORS[..cutoffs.len()].to_vec();
        AdaptiveSoftmaxConfig { cutoffs, divisors }
    }

    /// A single partition: plain softmax over the whole vocabulary.
    pub fn single(vocab: usize) -> Self {
        AdaptiveSoftmaxConfig {
            cutoffs: vec![vocab],
            divisors: vec![1],
        }
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.len() != self.divisors.len() {
            return Err(Error::Config("need one divisor per cutoff".into()));
        }
        if self.cutoffs[0] == 0 || self.cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("cutoffs {:?} must be positive and strictly ascending", self.cutoffs)));
        }
        if *self.cutoffs.last().unwrap() != vocab {
            return Err(Error::Config(format!("last cutoff must equal V = {vocab}")));
        }
        if self.divisors.contains(&0) || self.divisors[0] != 1 {
            return Err(Error::Config(format!("divisors {:?} must be >= 1 with the head at 1", self.divisors)));
        }
        Ok(())
    }

    pub fn n_tails(&self) -> usize {
        self.cutoffs.len() - 1
    }

    /// Width of partition `i`'s projected context.
    pub fn proj_dim(&self, i: usize, dim: usize) -> usize {
        (dim / self.divisors[i]).max(1)
    }

    /// Trainable parameters: head `(cutoffs[0] + n_tails) x m`, and for each
    /// tail a `m x d` projection plus a `size x d` output matrix.
    pub fn param_count(&self, dim: usize) -> usize {
        let head = (self.cutoffs[0] + self.n_tails()) * dim;
        let tails: usize = (1..self.cutoffs.len())
            .map(|i| {
                let d = self.proj_dim(i, dim);
                let size = self.cutoffs[i] - self.cutoffs[i - 1];
                dim * d + size * d
            })
            .sum();
        head + tails
    }
}

#[derive(Clone, Debug)]
struct Tail<T> {
    start: usize,
    size: usize,
    proj_dim: usize,
    /// `m x d`
    proj: Vec<T>,
    /// `size x d`
    out: Vec<T>,
}

/// Two-level factorized softmax: `p(w|c) = p_head(cluster(w)|c) * p_cluster(w|c)`
/// with head words forming singleton clusters.
#[derive(Clone, Debug)]
pub struct AdaptiveSoftmax<T> {
    config: AdaptiveSoftmaxConfig,
    dim: usize,
    /// `(cutoffs[0] + n_tails) x m`
    head: Vec<T>,
    tails: Vec<Tail<T>>,
    rank_of_id: Vec<usize>,
    /// Probability mass of each tail cluster under the unigram prior, used
    /// for the expected flop count.
    tail_mass: Vec<f64>,
}

enum Slot {
    Head(usize),
    Tail { cluster: usize, index: usize },
}

impl<T: Real> AdaptiveSoftmax<T> {
    /// Uniform random weights in `[-scale, scale)`; ids are their own
    /// frequency ranks and the unigram prior is Zipfian.
    pub fn random(config: AdaptiveSoftmaxConfig, dim: usize, scale: f64, seed: u64) -> Result<Self> {
        let vocab = *config.cutoffs.last().ok_or_else(|| Error::Config("empty cutoffs".into()))?;
        config.validate(vocab)?;
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::from_f64_lossy(rng.random_range(-scale..scale))).collect() };
        let head = draw((config.cutoffs[0] + config.n_tails()) * dim);
        let tails = (1..config.cutoffs.len())
            .map(|i| {
                let d = config.proj_dim(i, dim);
                let start = config.cutoffs[i - 1];
                let size = config.cutoffs[i] - start;
                Tail {
                    start,
                    size,
                    proj_dim: d,
                    proj: draw(dim * d),
                    out: draw(size * d),
                }
            })
            .collect();
        let mut layer = AdaptiveSoftmax {
            config,
            dim,
            head,
            tails,
            rank_of_id: (0..vocab).collect(),
            tail_mass: Vec::new(),
        };
        layer.set_unigram_counts(None)?;
        Ok(layer)
    }

    /// Maps word ids to frequency ranks (`rank_of_id[id]`).
    pub fn with_ranks(mut self, rank_of_id: Vec<usize>) -> Result<Self> {
        let v = self.vocab_size();
        let mut seen = vec![false; v];
        if rank_of_id.len() != v || rank_of_id.iter().any(|&r| r >= v || std::mem::replace(&mut seen[r], true)) {
            return Err(Error::Config("rank table is not a permutation of the vocabulary".into()));
        }
        self.rank_of_id = rank_of_id;
        Ok(self)
    }

    /// Sets the unigram prior behind the expected flop count. `counts` is
    /// indexed by rank; `None` means Zipf, `p(rank r) ~ 1/(r+1)`.
    pub fn set_unigram_counts(&mut self, counts_by_rank: Option<&[u64]>) -> Result<()> {
        let v = self.vocab_size();
        let weight = |r: usize| -> f64 {
            match counts_by_rank {
                Some(c) => c[r] as f64,
                None => 1.0 / (r + 1) as f64,
            }
        };
        if let Some(c) = counts_by_rank {
            if c.len() != v {
                return Err(Error::Shape(format!("{} counts for V={v}", c.len())));
            }
        }
        let total: f64 = (0..v).map(weight).sum();
        self.tail_mass = self
            .tails
            .iter()
            .map(|t| (t.start..t.start + t.size).map(weight).sum::<f64>() / total)
            .collect();
        Ok(())
    }

    pub fn config(&self) -> &AdaptiveSoftmaxConfig {
        &self.config
    }

    /// Head output matrix, row-major `(cutoffs[0] + n_tails) x m`.
    pub fn head_mut(&mut self) -> &mut [T] {
        &mut self.head
    }

    fn head_rows(&self) -> usize {
        self.config.cutoffs[0] + self.tails.len()
    }

    fn slot(&self, id: usize) -> Result<Slot> {
        let v = self.vocab_size();
        if id >= v {
            return Err(Error::UnknownWord { id, vocab: v });
        }
        let r = self.rank_of_id[id];
        let head = self.config.cutoffs[0];
        if r < head {
            return Ok(Slot::Head(r));
        }
        let cluster = self.tails.iter().position(|t| r < t.start + t.size).expect("rank below V");
        Ok(Slot::Tail {
            cluster,
            index: r - self.tails[cluster].start,
        })
    }

    fn head_logits(&self, c: &[T]) -> Vec<T> {
        self.head.chunks_exact(self.dim).map(|row| dot(row, c)).collect()
    }

    /// `u = c P` for tail `i`.
    fn project(&self, tail: &Tail<T>, c: &[T]) -> Vec<T> {
        let mut u = vec![T::zero(); tail.proj_dim];
        for (k, &ck) in c.iter().enumerate() {
            axpy(ck, &tail.proj[k * tail.proj_dim..(k + 1) * tail.proj_dim], &mut u);
        }
        u
    }

    fn tail_cost(&self, tail: &Tail<T>) -> u64 {
        let (m, d, s) = (self.dim as u64, tail.proj_dim as u64, tail.size as u64);
        // projection forward 2md, logits 2sd, softmax 5s, output grads 4sd,
        // projection grads 4md
        6 * m * d + 6 * s * d + 5 * s
    }

    fn head_cost(&self) -> u64 {
        let (h, m) = (self.head_rows() as u64, self.dim as u64);
        6 * h * m + 5 * h
    }

    /// Exact flop count for a specific batch of targets.
    pub fn flop_count_for_targets(&self, targets: &[usize]) -> Result<u64> {
        let mut total = 0u64;
        for &t in targets {
            total += self.head_cost();
            if let Slot::Tail { cluster, .. } = self.slot(t)? {
                total += self.tail_cost(&self.tails[cluster]);
            }
        }
        Ok(total)
    }
}

impl<T: Real> OutputLayer<T> for AdaptiveSoftmax<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Adaptive
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn vocab_size(&self) -> usize {
        *self.config.cutoffs.last().unwrap()
    }

    fn trainable_param_count(&self) -> usize {
        self.config.param_count(self.dim)
    }

    /// Expected count under the unigram prior: every example pays for the
    /// head, and for tail cluster `i` with probability equal to its mass.
    fn flop_count(&self, batch: usize) -> u64 {
        let expected: f64 = self.head_cost() as f64
            + self
                .tails
                .iter()
                .zip(&self.tail_mass)
                .map(|(t, &mass)| mass * self.tail_cost(t) as f64)
                .sum::<f64>();
        (batch as f64 * expected).round() as u64
    }

    fn memory_bytes(&self, batch: usize) -> u64 {
        let t = std::mem::size_of::<T>() as u64;
        let max_tail = self.tails.iter().map(|t| t.size + t.proj_dim).max().unwrap_or(0);
        (2 * self.trainable_param_count() as u64 + (batch * (self.head_rows() + max_tail)) as u64) * t
    }

    fn new_grads(&self) -> ParamGrads<T> {
        let mut sizes = vec![self.head.len()];
        for t in &self.tails {
            sizes.push(t.proj.len());
            sizes.push(t.out.len());
        }
        ParamGrads::zeros(&sizes)
    }

    fn loss_and_grad(&self, c: &[T], target: usize, dc: &mut [T], grads: &mut ParamGrads<T>) -> Result<T> {
        let m = self.dim;
        check_dims(c, dc, m)?;
        let slot = self.slot(target)?;
        let head_target = match slot {
            Slot::Head(r) => r,
            Slot::Tail { cluster, .. } => self.config.cutoffs[0] + cluster,
        };
        let with_grads = !grads.is_empty();

        let logits = self.head_logits(c);
        let lse = log_sum_exp(&logits);
        let mut loss = lse - logits[head_target];
        dc.iter_mut().for_each(|x| *x = T::zero());
        for (i, (row, &l)) in self.head.chunks_exact(m).zip(&logits).enumerate() {
            let mut g = (l - lse).exp();
            if i == head_target {
                g -= T::one();
            }
            axpy(g, row, dc);
            if with_grads {
                axpy(g, c, &mut grads.tensors[0][i * m..(i + 1) * m]);
            }
        }

        if let Slot::Tail { cluster, index } = slot {
            let tail = &self.tails[cluster];
            let d = tail.proj_dim;
            let u = self.project(tail, c);
            let tl: Vec<T> = tail.out.chunks_exact(d).map(|row| dot(row, &u)).collect();
            let tlse = log_sum_exp(&tl);
            loss += tlse - tl[index];
            let mut du = vec![T::zero(); d];
            for (j, (row, &l)) in tail.out.chunks_exact(d).zip(&tl).enumerate() {
                let mut g = (l - tlse).exp();
                if j == index {
                    g -= T::one();
                }
                axpy(g, row, &mut du);
                if with_grads {
                    axpy(g, &u, &mut grads.tensors[2 + 2 * cluster][j * d..(j + 1) * d]);
                }
            }
            for k in 0..m {
                let prow = &tail.proj[k * d..(k + 1) * d];
                dc[k] += dot(prow, &du);
                if with_grads {
                    axpy(c[k], &du, &mut grads.tensors[1 + 2 * cluster][k * d..(k + 1) * d]);
                }
            }
        }
        Ok(loss)
    }

    fn log_prob(&self, c: &[T], target: usize) -> Result<T> {
        let logits = self.head_logits(c);
        let lse = log_sum_exp(&logits);
        match self.slot(target)? {
            Slot::Head(r) => Ok(logits[r] - lse),
            Slot::Tail { cluster, index } => {
                let tail = &self.tails[cluster];
                let u = self.project(tail, c);
                let tl: Vec<T> = tail.out.chunks_exact(tail.proj_dim).map(|row| dot(row, &u)).collect();
                Ok(logits[self.config.cutoffs[0] + cluster] - lse + tl[index] - log_sum_exp(&tl))
            }
        }
    }

    fn params(&self) -> Vec<(String, &[T])> {
        let mut out = vec![("adaptive.head".to_string(), self.head.as_slice())];
        for (i, t) in self.tails.iter().enumerate() {
            out.push((format!("adaptive.tail{i}.proj"), t.proj.as_slice()));
            out.push((format!("adaptive.tail{i}.out"), t.out.as_slice()));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![self.head.as_mut_slice()];
        for t in &mut self.tails {
            out.push(t.proj.as_mut_slice());
            out.push(t.out.as_mut_slice());
        }
        out
    }
}
