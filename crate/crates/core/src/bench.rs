//! Per-batch timing, flop and parameter accounting, and vocabulary sweeps
//! for the output layers.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::output::{
    AdaptiveSoftmax, AdaptiveSoftmaxConfig, Distance, FullSoftmax, LayerKind, LogUniformSampler, OutputLayer, SampledSoftmax, SemFit,
    TargetTable,
};
use crate::real::Real;
use crate::train::csv_err;

pub const WARMUP_REPS: usize = 2;
pub const MIN_REPS: usize = 5;

/// A timed repetition runs the batch enough times to last at least this
/// long, so sub-microsecond layers are not dominated by timer resolution.
pub const MIN_REP_NS: u128 = 2_000_000;

pub const CSV_HEADER: [&str; 9] = ["layer", "V", "m", "batch", "median_ns", "flops", "trainable_params", "grad_payload_bytes", "error"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub layer: LayerKind,
    pub vocab: usize,
    pub dim: usize,
    pub batch: usize,
    /// Median wall time per batch; absent when timing is disabled or the
    /// cell failed.
    pub median_ns: Option<u64>,
    pub flops: u64,
    pub trainable_params: usize,
    pub grad_payload_bytes: u64,
    /// Parameters, gradient buffers, fixed tables and batch workspace.
    pub memory_bytes: u64,
    pub error: Option<String>,
}

impl BenchRecord {
    fn from_layer<T: Real>(layer: &dyn OutputLayer<T>, batch: usize) -> Self {
        BenchRecord {
            layer: layer.kind(),
            vocab: layer.vocab_size(),
            dim: layer.dim(),
            batch,
            median_ns: None,
            flops: layer.flop_count(batch),
            trainable_params: layer.trainable_param_count(),
            grad_payload_bytes: layer.grad_payload_bytes(batch),
            memory_bytes: layer.memory_bytes(batch),
            error: None,
        }
    }

    fn failed(layer: LayerKind, vocab: usize, dim: usize, batch: usize, err: &Error) -> Self {
        BenchRecord {
            layer,
            vocab,
            dim,
            batch,
            median_ns: None,
            flops: 0,
            trainable_params: 0,
            grad_payload_bytes: 0,
            memory_bytes: 0,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub encoder: usize,
    pub output_trainable: usize,
    /// Pre-trained embeddings (input table and SemFit targets); not trained.
    pub fixed_embedding: usize,
}

impl ParamBreakdown {
    pub fn trainable(&self) -> usize {
        self.encoder + self.output_trainable
    }
}

pub fn count_params<T: Real>(encoder: Option<&EncoderParams>, output: &dyn OutputLayer<T>, fixed_embedding: usize) -> ParamBreakdown {
    ParamBreakdown {
        encoder: encoder.map_or(0, EncoderParams::param_count),
        output_trainable: output.trainable_param_count(),
        fixed_embedding,
    }
}

fn median(mut xs: Vec<u128>) -> u128 {
    xs.sort_unstable();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Median wall time of `batch_loss_and_grad` over `reps` repetitions after
/// two warm-up runs. Inputs are generated up front; the same batch is
/// replayed each time.
pub fn time_output_layer<T: Real>(layer: &dyn OutputLayer<T>, batch: usize, reps: usize, seed: u64) -> Result<BenchRecord> {
    if reps < MIN_REPS {
        return Err(Error::Config(format!("need at least {MIN_REPS} repetitions, got {reps}")));
    }
    if batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let m = layer.dim();
    let v = layer.vocab_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cs: Vec<T> = (0..batch * m)
        .map(|_| T::from_f64_lossy(StandardNormal.sample(&mut rng)))
        .collect();
    let targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..v)).collect();
    let mut dcs = vec![T::zero(); batch * m];
    let mut grads = layer.new_grads();
    let mut run = || -> Result<()> {
        let loss = layer.batch_loss_and_grad(&cs, &targets, &mut dcs, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("benchmark loss".into()));
        }
        std::hint::black_box(&dcs);
        Ok(())
    };
    for _ in 0..WARMUP_REPS {
        run()?;
    }
    let start = Instant::now();
    run()?;
    let once = start.elapsed().as_nanos().max(1);
    let inner = (MIN_REP_NS / once + 1) as usize;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for _ in 0..inner {
            run()?;
        }
        samples.push(start.elapsed().as_nanos() / inner as u128);
    }
    let mut rec = BenchRecord::from_layer(layer, batch);
    rec.median_ns = Some(median(samples).max(1) as u64);
    Ok(rec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub layers: Vec<LayerKind>,
    pub vocabs: Vec<usize>,
    pub dim: usize,
    pub batch: usize,
    pub reps: usize,
    /// When false only the deterministic columns are filled.
    pub timing: bool,
    pub seed: u64,
    pub sampled_negatives: usize,
    pub distance: Distance,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            layers: vec![LayerKind::Semfit, LayerKind::Adaptive, LayerKind::Softmax],
            vocabs: vec![40_000, 200_000, 1_000_000],
            dim: 300,
            batch: 16,
            reps: MIN_REPS,
            timing: true,
            seed: 0,
            sampled_negatives: 8192,
            distance: Distance::Cosine,
        }
    }
}

/// Builds a randomly initialized `f32` layer for benchmarking. Word ids
/// double as frequency ranks.
pub fn bench_layer(kind: LayerKind, vocab: usize, dim: usize, cfg: &SweepConfig) -> Result<Box<dyn OutputLayer<f32>>> {
    let scale = 1.0 / (dim as f64).sqrt();
    Ok(match kind {
        LayerKind::Softmax => Box::new(FullSoftmax::<f32>::random(vocab, dim, scale, cfg.seed)?),
        LayerKind::Sampled => Box::new(SampledSoftmax::<f32>::random(
            vocab,
            dim,
            cfg.sampled_negatives,
            Box::new(LogUniformSampler::identity(vocab)),
            scale,
            cfg.seed,
        )?),
        LayerKind::Adaptive => Box::new(AdaptiveSoftmax::<f32>::random(AdaptiveSoftmaxConfig::default_policy(vocab), dim, scale, cfg.seed)?),
        LayerKind::Semfit => Box::new(SemFit::new(cfg.distance, TargetTable::<f32>::random(vocab, dim, cfg.distance.needs_unit_targets(), cfg.seed)?)?),
    })
}

/// Flop and parameter columns for a layer without building it. Only the
/// vocabulary-independent heads can skip allocation.
fn accounting_only(kind: LayerKind, vocab: usize, cfg: &SweepConfig) -> Option<BenchRecord> {
    let (m, b) = (cfg.dim, cfg.batch);
    let (flops, params) = match kind {
        LayerKind::Softmax => (b as u64 * FullSoftmax::<f32>::flops_per_example(vocab, m), vocab * m),
        LayerKind::Semfit => (b as u64 * cfg.distance.flops_per_example(m), 0),
        _ => return None,
    };
    let t = std::mem::size_of::<f32>() as u64;
    let memory_bytes = match kind {
        LayerKind::Softmax => (2 * (vocab * m) as u64 + (b * vocab) as u64) * t,
        _ => ((vocab + b) * m) as u64 * t,
    };
    Some(BenchRecord {
        layer: kind,
        vocab,
        dim: m,
        batch: b,
        median_ns: None,
        flops,
        trainable_params: params,
        grad_payload_bytes: params as u64 * t,
        memory_bytes,
        error: None,
    })
}

/// One record per `(layer, V)` cell in grid order. A failing cell becomes a
/// record carrying the error and the sweep moves on.
pub fn vocab_sweep(cfg: &SweepConfig, mut progress: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    if cfg.layers.is_empty() || cfg.vocabs.is_empty() {
        return Err(Error::Config("benchmark grid is empty".into()));
    }
    let mut out = Vec::new();
    for &kind in &cfg.layers {
        for &v in &cfg.vocabs {
            let rec = if !cfg.timing {
                match accounting_only(kind, v, cfg) {
                    Some(r) => Ok(r),
                    None => bench_layer(kind, v, cfg.dim, cfg).map(|l| BenchRecord::from_layer(l.as_ref(), cfg.batch)),
                }
            } else {
                bench_layer(kind, v, cfg.dim, cfg).and_then(|l| time_output_layer(l.as_ref(), cfg.batch, cfg.reps, cfg.seed))
            };
            let rec = rec.unwrap_or_else(|e| BenchRecord::failed(kind, v, cfg.dim, cfg.batch, &e));
            progress(&rec);
            out.push(rec);
        }
    }
    Ok(out)
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.layer.to_string(),
            r.vocab.to_string(),
            r.dim.to_string(),
            r.batch.to_string(),
            r.median_ns.map_or(String::new(), |x| x.to_string()),
            r.flops.to_string(),
            r.trainable_params.to_string(),
            r.grad_payload_bytes.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub config_hash: String,
    pub config: SweepConfig,
    pub records: Vec<BenchRecord>,
}
