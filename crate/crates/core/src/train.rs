//! Mini-batch SGD for the encoder and whichever output head it feeds.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{ContextKey, ContextSpec, Corpus, Vocabulary};
use crate::embedding::{Composition, EmbeddingTable};
use crate::encoder::{sgd_step, ContextEmbedder, EncoderParams, LrSchedule};
use crate::error::{Error, Result};
use crate::output::{
    apply_sgd, AdaptiveSoftmax, AdaptiveSoftmaxConfig, Distance, FullSoftmax, LayerKind, LogUniformSampler, NegativeSampler, OutputLayer,
    ParamGrads, SampledSoftmax, SemFit, TargetTable, UniformSampler,
};

/// Initial output weights are uniform in `[-INIT_SCALE, INIT_SCALE)`.
pub const INIT_SCALE: f64 = 0.05;

/// All `(context, target)` pairs of a corpus, in corpus order.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub contexts: Vec<ContextKey>,
    pub targets: Vec<usize>,
}

impl Dataset {
    pub fn from_corpus(corpus: &Corpus, spec: ContextSpec) -> Self {
        let mut d = Dataset::default();
        for pair in corpus.pairs(spec) {
            d.contexts.push(pair.context);
            d.targets.push(pair.target as usize);
        }
        d
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Up to `n` evenly spaced example indices.
    pub fn eval_indices(&self, n: usize) -> Vec<usize> {
        let len = self.len();
        if n >= len {
            return (0..len).collect();
        }
        (0..n).map(|i| i * len / n).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    Uniform,
    LogUniform,
}

/// How to build an output head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadConfig {
    Softmax,
    Sampled { negatives: usize, proposal: Proposal },
    /// `None` selects the default cutoff policy for the vocabulary size.
    Adaptive { config: Option<AdaptiveSoftmaxConfig> },
    Semfit { distance: Distance, composition: Composition },
}

impl HeadConfig {
    pub fn kind(&self) -> LayerKind {
        match self {
            HeadConfig::Softmax => LayerKind::Softmax,
            HeadConfig::Sampled { .. } => LayerKind::Sampled,
            HeadConfig::Adaptive { .. } => LayerKind::Adaptive,
            HeadConfig::Semfit { .. } => LayerKind::Semfit,
        }
    }
}

/// One of the output layers, in `f64`.
#[derive(Debug)]
pub enum Head {
    Softmax(FullSoftmax<f64>),
    Sampled(SampledSoftmax<f64>),
    Adaptive(AdaptiveSoftmax<f64>),
    Semfit(SemFit<f64>),
}

impl Head {
    /// Builds a freshly initialized head. SemFit needs `targets`, the
    /// pre-trained table its target vectors come from.
    pub fn build(config: &HeadConfig, vocab: &Vocabulary, dim: usize, targets: Option<&EmbeddingTable>, seed: u64) -> Result<Head> {
        let v = vocab.len();
        Ok(match config {
            HeadConfig::Softmax => Head::Softmax(FullSoftmax::random(v, dim, INIT_SCALE, seed)?),
            HeadConfig::Sampled { negatives, proposal } => {
                let sampler: Box<dyn NegativeSampler> = match proposal {
                    Proposal::Uniform => Box::new(UniformSampler::new(v)),
                    Proposal::LogUniform => Box::new(LogUniformSampler::new(vocab.ids_by_frequency().into_iter().map(|i| i as usize).collect())?),
                };
                Head::Sampled(SampledSoftmax::random(v, dim, *negatives, sampler, INIT_SCALE, seed)?)
            }
            HeadConfig::Adaptive { config } => {
                let cfg = config.clone().unwrap_or_else(|| AdaptiveSoftmaxConfig::default_policy(v));
                let ranks = vocab.frequency_ranks();
                let mut by_rank = vec![0u64; v];
                for (id, &r) in ranks.iter().enumerate() {
                    by_rank[r] = vocab.count(id as _);
                }
                let mut layer = AdaptiveSoftmax::random(cfg, dim, INIT_SCALE, seed)?.with_ranks(ranks)?;
                layer.set_unigram_counts(Some(&by_rank))?;
                Head::Adaptive(layer)
            }
            HeadConfig::Semfit { distance, composition } => {
                let table = targets.ok_or_else(|| Error::Config("SemFit needs a target embedding table".into()))?;
                if table.dim() != dim {
                    return Err(Error::Config(format!("target embeddings have dimension {}, context vectors {dim}", table.dim())));
                }
                let t = TargetTable::from_embeddings(table, vocab.words(), *composition, distance.needs_unit_targets())?;
                Head::Semfit(SemFit::new(*distance, t)?)
            }
        })
    }

    pub fn layer(&self) -> &dyn OutputLayer<f64> {
        match self {
            Head::Softmax(l) => l,
            Head::Sampled(l) => l,
            Head::Adaptive(l) => l,
            Head::Semfit(l) => l,
        }
    }

    pub fn layer_mut(&mut self) -> &mut dyn OutputLayer<f64> {
        match self {
            Head::Softmax(l) => l,
            Head::Sampled(l) => l,
            Head::Adaptive(l) => l,
            Head::Semfit(l) => l,
        }
    }

    /// Values held by the head that are not trained (SemFit targets).
    pub fn fixed_param_count(&self) -> usize {
        match self {
            Head::Semfit(l) => l.targets().as_slice().len(),
            _ => 0,
        }
    }

    /// Adds the head's tensors to `ck`: trainable weights, or the fixed
    /// target table for SemFit.
    pub fn save_into(&self, ck: &mut Checkpoint) {
        match self {
            Head::Semfit(l) => ck.push("semfit.targets", false, l.targets().as_slice()),
            _ => {
                for (name, t) in self.layer().params() {
                    ck.push(name, true, t);
                }
            }
        }
    }

    /// Overwrites trainable weights from `ck`. SemFit targets are rebuilt
    /// from the embedding table, so only their size is checked.
    pub fn load_from(&mut self, ck: &Checkpoint) -> Result<()> {
        if let Head::Semfit(l) = self {
            let b = ck.blob("semfit.targets")?;
            if b.data.len() != l.targets().as_slice().len() {
                return Err(Error::Checkpoint("target table size differs from checkpoint".into()));
            }
            return Ok(());
        }
        let names: Vec<String> = self.layer().params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(self.layer_mut().params_mut()) {
            let b = ck.blob(name)?;
            if b.data.len() != p.len() {
                return Err(Error::Checkpoint(format!("{name} holds {} values, model expects {}", b.data.len(), p.len())));
            }
            for (x, &y) in p.iter_mut().zip(&b.data) {
                *x = y as f64;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Examples in the fixed evaluation sample.
    pub eval_examples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub examples: usize,
    pub mean_loss: f64,
    /// Mean `1 - cos(c, w_target)`, SemFit only.
    pub mean_cosine_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<StepRecord>,
    pub initial: EvalMetrics,
    pub last: EvalMetrics,
}

impl TrainReport {
    pub fn write_curve_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "lr", "loss"]).map_err(csv_err)?;
        for r in &self.curve {
            w.write_record([r.step.to_string(), format!("{:e}", r.lr), format!("{:e}", r.loss)]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Mean head loss over the given examples, without updating anything.
pub fn evaluate(params: &EncoderParams, head: &Head, embedder: &ContextEmbedder, data: &Dataset, indices: &[usize]) -> Result<EvalMetrics> {
    let layer = head.layer();
    let m = layer.dim();
    let mut dc = vec![0.0; m];
    let mut grads = ParamGrads::default();
    let (mut loss, mut dist) = (0.0, 0.0);
    for &i in indices {
        let (c, _) = params.forward(&embedder.embed(&data.contexts[i])?)?;
        let t = data.targets[i];
        loss += match head {
            // the sampled loss is stochastic; report the exact one
            Head::Sampled(_) => -layer_log_prob(head, &c, t)?,
            _ => layer.loss_and_grad(&c, t, &mut dc, &mut grads)?,
        };
        if let Head::Semfit(s) = head {
            dist += s.cosine_distance(&c, t)?;
        }
    }
    let n = indices.len().max(1) as f64;
    Ok(EvalMetrics {
        examples: indices.len(),
        mean_loss: loss / n,
        mean_cosine_distance: matches!(head, Head::Semfit(_)).then_some(dist / n),
    })
}

fn layer_log_prob(head: &Head, c: &[f64], t: usize) -> Result<f64> {
    head.layer().log_prob(c, t)
}

/// Trains `params` and `head` in place. On a non-finite loss or gradient
/// the step is abandoned before any update, so both hold the last good
/// state when the error is returned.
pub fn train(
    params: &mut EncoderParams,
    head: &mut Head,
    embedder: &ContextEmbedder,
    data: &Dataset,
    opts: &TrainOptions,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    if opts.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let m = head.layer().dim();
    if params.dims.output_dim != m {
        return Err(Error::Config(format!("encoder emits {} dims, head expects {m}", params.dims.output_dim)));
    }
    let eval_idx = data.eval_indices(opts.eval_examples);
    let initial = evaluate(params, head, embedder, data, &eval_idx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let b = opts.batch;
    let mut curve = Vec::with_capacity(opts.steps as usize);
    let mut cs = vec![0.0; b * m];
    let mut dcs = vec![0.0; b * m];
    let mut targets = vec![0usize; b];
    let mut tapes = Vec::with_capacity(b);
    for step in 1..=opts.steps {
        tapes.clear();
        for e in 0..b {
            let i = rng.random_range(0..data.len());
            let (c, tape) = params.forward(&embedder.embed(&data.contexts[i])?)?;
            cs[e * m..(e + 1) * m].copy_from_slice(&c);
            targets[e] = data.targets[i];
            tapes.push(tape);
        }
        let mut lgrads = head.layer().new_grads();
        let total = head.layer().batch_loss_and_grad(&cs, &targets, &mut dcs, &mut lgrads)?;
        let loss = total / b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        let mut egrads = EncoderParams::zeros(params.dims);
        for (e, tape) in tapes.iter().enumerate() {
            params.backward_into(tape, &dcs[e * m..(e + 1) * m], &mut egrads)?;
        }
        let inv = 1.0 / b as f64;
        egrads.scale(inv);
        for t in &mut lgrads.tensors {
            t.iter_mut().for_each(|x| *x *= inv);
        }
        if !egrads.is_finite() || lgrads.tensors.iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("gradient at step {step}")));
        }
        let lr = opts.schedule.lr(step);
        sgd_step(params, &egrads, lr)?;
        apply_sgd(head.layer_mut(), &lgrads, lr)?;
        let rec = StepRecord { step, lr, loss };
        on_step(&rec);
        curve.push(rec);
    }
    let last = evaluate(params, head, embedder, data, &eval_idx)?;
    Ok(TrainReport { curve, initial, last })
}
