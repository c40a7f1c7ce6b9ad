use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use serde_json::{json, Map, Value};

use semfit::analysis::{
    decode_agreement, encoder_direction_check, nn_decode, optimal_direction_check, perplexity, svd_projection_study, unigram_perplexity, DecodeMetric,
    DirectOptions,
};
use semfit::bench::{count_params, vocab_sweep, write_csv, BenchSummary, SweepConfig};
use semfit::checkpoint::Checkpoint;
use semfit::corpus::{ConditionalProbMatrix, ContextKey, ContextSpec, Corpus, Direction, WordId};
use semfit::embedding::{
    load_text_embeddings, load_with_buckets, neighbor_counts, positive_pmi, train_svd_embedding, Composition, EmbeddingTable, SvdEmbedding,
};
use semfit::encoder::{ContextEmbedder, EncoderDims, EncoderParams, LrSchedule};
use semfit::output::{AdaptiveSoftmaxConfig, Distance, LayerKind, TargetTable};
use semfit::train::{evaluate, train as train_model, Dataset, Head, HeadConfig, Proposal, StepRecord, TrainOptions};
use semfit::Error;

use crate::config::RunConfig;
use crate::UsageError;

const EMBEDDINGS_FILE: &str = "embeddings.txt";
const BUCKETS_FILE: &str = "buckets.bin";
const CHECKPOINT_FILE: &str = "checkpoint.ck";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads a `"kebab-case"` enum value through its serde representation.
fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(Value::from(value)).map_err(|_| usage(format!("bad value {value:?} for {key}")))
}

fn resolve(config: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let base = config.map(RunConfig::read_file).transpose()?;
    Ok(RunConfig::resolve(base, overrides)?)
}

/// Creates the run directory and writes the resolved config into it.
fn start(command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir(command);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let echo = cfg.to_pretty_json();
    fs::write(dir.join("config.json"), format!("{echo}\n"))?;
    log::info!("resolved config:\n{echo}");
    println!("run directory: {}", dir.display());
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn read_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let path = cfg.corpus_path.as_ref().ok_or_else(|| usage("no corpus given (--corpus or \"corpus.path\")"))?;
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read corpus {}: {e}", path.display())))?;
    let corpus = Corpus::from_text(&text);
    log::info!("corpus: {} tokens, {} distinct words", corpus.token_count(), corpus.vocab.len());
    Ok(corpus)
}

fn context_spec(cfg: &RunConfig) -> Result<ContextSpec> {
    let direction: Direction = parse_enum("context.direction", &cfg.context_direction)?;
    Ok(ContextSpec::new(direction, cfg.context_k)?)
}

fn distance(cfg: &RunConfig) -> Result<Distance> {
    let d = match cfg.output_distance.as_str() {
        "l2" => Distance::L2,
        "cosine" => Distance::Cosine,
        "nllvmf" => Distance::NllVmf {
            lambda1: cfg.output_lambda1,
            lambda2: cfg.output_lambda2,
        },
        other => return Err(usage(format!("bad value {other:?} for output.distance"))),
    };
    d.validate()?;
    Ok(d)
}

fn head_config(cfg: &RunConfig) -> Result<HeadConfig> {
    let kind: LayerKind = cfg.output_kind.parse().map_err(|_| usage(format!("bad value {:?} for output.kind", cfg.output_kind)))?;
    Ok(match kind {
        LayerKind::Softmax => HeadConfig::Softmax,
        LayerKind::Sampled => HeadConfig::Sampled {
            negatives: cfg.output_negatives,
            proposal: parse_enum::<Proposal>("output.proposal", &cfg.output_proposal)?,
        },
        LayerKind::Adaptive => HeadConfig::Adaptive {
            config: match (&cfg.output_adaptive_cutoffs, &cfg.output_adaptive_divisors) {
                (None, None) => None,
                (Some(c), Some(d)) => Some(AdaptiveSoftmaxConfig {
                    cutoffs: c.clone(),
                    divisors: d.clone(),
                }),
                _ => return Err(usage("output.adaptive.cutoffs and output.adaptive.divisors go together")),
            },
        },
        LayerKind::Semfit => HeadConfig::Semfit {
            distance: distance(cfg)?,
            composition: parse_enum::<Composition>("output.composition", &cfg.output_composition)?,
        },
    })
}

fn svd_embedding(cfg: &RunConfig, corpus: &Corpus, alpha: f64) -> Result<SvdEmbedding> {
    let ppmi = positive_pmi(neighbor_counts(corpus, cfg.embedding_features).view());
    let dim = cfg.embedding_dim.min(ppmi.nrows()).min(ppmi.ncols());
    if dim != cfg.embedding_dim {
        return Err(usage(format!("embedding.dim {} exceeds the {}x{} feature matrix", cfg.embedding_dim, ppmi.nrows(), ppmi.ncols())));
    }
    let emb = train_svd_embedding(ppmi.view(), corpus.vocab.words().to_vec(), dim, alpha, cfg.seed)?;
    if emb.rank_limited {
        log::warn!("embedding.dim {dim} exceeds the feature matrix rank {}", emb.rank);
    }
    Ok(emb)
}

fn embeddings(cfg: &RunConfig, corpus: &Corpus) -> Result<EmbeddingTable> {
    match cfg.embedding_source.as_str() {
        "svd" => Ok(svd_embedding(cfg, corpus, cfg.embedding_alpha)?.table),
        "file" => {
            let path = cfg.embedding_path.as_ref().ok_or_else(|| usage("embedding.source \"file\" needs embedding.path"))?;
            if !path.exists() {
                return Err(usage(format!("no embedding file at {}", path.display())));
            }
            let table = match &cfg.embedding_buckets {
                Some(b) => load_with_buckets(path, b)?,
                None => load_text_embeddings(path)?,
            };
            if table.dim() != cfg.embedding_dim {
                return Err(Error::Config(format!("{} holds {}-dimensional vectors, embedding.dim is {}", path.display(), table.dim(), cfg.embedding_dim)).into());
            }
            Ok(table)
        }
        other => Err(usage(format!("bad value {other:?} for embedding.source"))),
    }
}

fn write_curve(path: &Path, curve: &[StepRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "step,lr,loss")?;
    for r in curve {
        writeln!(out, "{},{:e},{:e}", r.step, r.lr, r.loss)?;
    }
    out.flush()?;
    Ok(())
}

pub fn train(config: Option<&Path>, overrides: &[(String, Value)]) -> Result<()> {
    let cfg = resolve(config, overrides)?;
    let corpus = read_corpus(&cfg)?;
    let spec = context_spec(&cfg)?;
    let hc = head_config(&cfg)?;
    let table = embeddings(&cfg, &corpus)?;
    let dir = start("train", &cfg)?;
    table.save_text(dir.join(EMBEDDINGS_FILE))?;
    table.write_buckets(BufWriter::new(File::create(dir.join(BUCKETS_FILE))?))?;

    let data = Dataset::from_corpus(&corpus, spec);
    let embedder = ContextEmbedder::new(&table, &corpus.vocab, spec.direction)?;
    let m = table.dim();
    let dims = EncoderDims {
        k: cfg.context_k,
        input_dim: m,
        hidden: cfg.encoder_hidden,
        output_dim: m,
    };
    let mut params = EncoderParams::init(cfg.seed, dims)?;
    let mut head = Head::build(&hc, &corpus.vocab, m, Some(&table), cfg.seed.wrapping_add(1))?;
    let opts = TrainOptions {
        steps: cfg.train_steps,
        batch: cfg.train_batch,
        schedule: LrSchedule {
            base: cfg.train_lr,
            warmup: cfg.train_warmup,
        },
        seed: cfg.seed.wrapping_add(2),
        eval_examples: cfg.train_eval_examples,
    };
    let every = (cfg.train_steps / 10).max(1);
    let mut curve = Vec::new();
    let result = train_model(&mut params, &mut head, &embedder, &data, &opts, |s| {
        if s.step % every == 0 {
            log::info!("step {} lr {:.4} loss {:.6}", s.step, s.lr, s.loss);
        }
        curve.push(*s);
    });

    // On failure the parameters are the last good ones; keep them.
    let mut ck = Checkpoint::new(serde_json::to_string(&json!({
        "config": cfg.to_map(),
        "embeddings": EMBEDDINGS_FILE,
        "buckets": BUCKETS_FILE,
    }))?);
    ck.push_encoder(&params);
    head.save_into(&mut ck);
    ck.save(dir.join(CHECKPOINT_FILE))?;
    write_curve(&dir.join("curve.csv"), &curve)?;

    let report = result?;
    let fixed = table.len() * m + head.fixed_param_count();
    let breakdown = count_params(Some(&params), head.layer(), fixed);
    let metrics = json!({
        "layer": hc.kind().as_str(),
        "vocab": corpus.vocab.len(),
        "tokens": corpus.token_count(),
        "pairs": data.len(),
        "steps": cfg.train_steps,
        "initial": report.initial,
        "final": report.last,
        "params": {
            "encoder": breakdown.encoder,
            "output_trainable": breakdown.output_trainable,
            "fixed_embedding": breakdown.fixed_embedding,
        },
    });
    write_json(&dir.join("metrics.json"), &metrics)?;
    println!("initial mean loss {:.6}, final mean loss {:.6}", report.initial.mean_loss, report.last.mean_loss);
    if let (Some(a), Some(b)) = (report.initial.mean_cosine_distance, report.last.mean_cosine_distance) {
        println!("initial cosine distance {a:.6}, final cosine distance {b:.6}");
    }
    Ok(())
}

/// A trained model rebuilt from a checkpoint and the config it recorded.
struct Model {
    trained: RunConfig,
    corpus: Corpus,
    spec: ContextSpec,
    table: EmbeddingTable,
    embedder: ContextEmbedder,
    params: EncoderParams,
    head: Head,
    data: Dataset,
}

fn checkpoint_path(flag: Option<&Path>, config: Option<&Path>) -> Result<PathBuf> {
    let from_file = match config {
        Some(c) => RunConfig::read_file(c)?.get("checkpoint").and_then(Value::as_str).map(PathBuf::from),
        None => None,
    };
    let path = flag.map(Path::to_path_buf).or(from_file).ok_or_else(|| usage("no checkpoint given (--checkpoint)"))?;
    if !path.is_file() {
        return Err(usage(format!("no checkpoint at {}", path.display())));
    }
    Ok(path)
}

/// Loads the checkpoint and resolves the command's config. Without a config
/// file the checkpoint's own config is the base.
fn load(command: &str, config: Option<&Path>, checkpoint: Option<&Path>, overrides: &[(String, Value)]) -> Result<(RunConfig, Model)> {
    let path = checkpoint_path(checkpoint, config)?;
    let ck = Checkpoint::load(&path)?;
    let meta: Map<String, Value> = serde_json::from_str(&ck.meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    let recorded = match meta.get("config") {
        Some(Value::Object(m)) => m.clone(),
        _ => return Err(Error::Checkpoint("metadata has no config".into()).into()),
    };
    let trained = RunConfig::resolve(Some(recorded.clone()), &[])?;
    let base = match config {
        Some(c) => RunConfig::read_file(c)?,
        None => recorded,
    };
    let mut o = overrides.to_vec();
    o.push(("checkpoint".into(), Value::from(path.to_string_lossy().into_owned())));
    let cfg = RunConfig::resolve(Some(base), &o)?;
    log::info!("{command}: loading {}", path.display());

    let corpus = read_corpus(&trained)?;
    let spec = context_spec(&trained)?;
    let here = path.parent().unwrap_or(Path::new("."));
    let file = |key: &str| -> Result<PathBuf> {
        let name = meta.get(key).and_then(Value::as_str).ok_or_else(|| Error::Checkpoint(format!("metadata has no {key}")))?;
        Ok(here.join(name))
    };
    let table = load_with_buckets(file("embeddings")?, file("buckets")?)?;
    let embedder = ContextEmbedder::new(&table, &corpus.vocab, spec.direction)?;
    let m = table.dim();
    let dims = EncoderDims {
        k: trained.context_k,
        input_dim: m,
        hidden: trained.encoder_hidden,
        output_dim: m,
    };
    let mut params = EncoderParams::zeros(dims);
    ck.load_encoder(&mut params)?;
    let mut head = Head::build(&head_config(&trained)?, &corpus.vocab, m, Some(&table), trained.seed.wrapping_add(1))?;
    head.load_from(&ck)?;
    let data = Dataset::from_corpus(&corpus, spec);
    Ok((
        cfg,
        Model {
            trained,
            corpus,
            spec,
            table,
            embedder,
            params,
            head,
            data,
        },
    ))
}

/// Most frequent target per context; ties go to the lowest id.
fn context_modes(model: &Model) -> HashMap<ContextKey, WordId> {
    let mut best: HashMap<ContextKey, (u64, WordId)> = HashMap::new();
    for (ctx, w, n) in model.corpus.pair_counts(model.spec).iter() {
        let e = best.entry(ctx.clone()).or_insert((0, w));
        if n > e.0 || (n == e.0 && w < e.1) {
            *e = (n, w);
        }
    }
    best.into_iter().map(|(k, (_, w))| (k, w)).collect()
}

pub fn eval(config: Option<&Path>, checkpoint: Option<&Path>, overrides: &[(String, Value)]) -> Result<()> {
    let (cfg, model) = load("eval", config, checkpoint, overrides)?;
    let layer = model.head.layer();
    let kind = layer.kind();
    if cfg.eval_perplexity && !kind.is_normalized() {
        return Err(Error::PerplexityUndefined.into());
    }
    let dir = start("eval", &cfg)?;
    let idx = model.data.eval_indices(cfg.train_eval_examples);
    let metrics = evaluate(&model.params, &model.head, &model.embedder, &model.data, &idx)?;
    let m = layer.dim();
    let mut cs = Vec::with_capacity(idx.len() * m);
    for &i in &idx {
        cs.extend(model.params.forward(&model.embedder.embed(&model.data.contexts[i])?)?.0);
    }
    let targets: Vec<usize> = idx.iter().map(|&i| model.data.targets[i]).collect();

    let mut out = json!({
        "layer": kind.as_str(),
        "examples": metrics.examples,
        "mean_loss": metrics.mean_loss,
    });
    if kind.is_normalized() {
        out["perplexity"] = json!(perplexity(layer, &cs, &targets)?);
        out["unigram_perplexity"] = json!(unigram_perplexity(model.corpus.vocab.counts())?);
    } else if let Head::Semfit(s) = &model.head {
        let t = s.targets();
        let w = ArrayView2::from_shape((t.vocab_size(), t.dim()), t.as_slice()).expect("table shape");
        let metric = if s.distance() == Distance::L2 { DecodeMetric::L2 } else { DecodeMetric::Cosine };
        let modes = context_modes(&model);
        let (mut hit, mut agree, mut decoded_n) = (0usize, 0usize, 0usize);
        for (k, (c, &t)) in cs.chunks_exact(m).zip(&targets).enumerate() {
            let Ok(d) = nn_decode(c, w, metric) else { continue };
            decoded_n += 1;
            hit += usize::from(d == t);
            agree += usize::from(modes.get(&model.data.contexts[idx[k]]).is_some_and(|&w| w as usize == d));
        }
        let n = decoded_n.max(1) as f64;
        out["mean_cosine_distance"] = json!(metrics.mean_cosine_distance);
        out["decode_accuracy"] = json!(hit as f64 / n);
        out["decode_mode_agreement"] = json!(agree as f64 / n);
        out["undecodable"] = json!(targets.len() - decoded_n);
    }
    write_json(&dir.join("eval.json"), &out)?;
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

pub fn analyze(config: Option<&Path>, checkpoint: Option<&Path>, overrides: &[(String, Value)]) -> Result<()> {
    let (cfg, model) = load("analyze", config, checkpoint, overrides)?;
    let metric: DecodeMetric = parse_enum("analyze.metric", &cfg.analyze_metric)?;
    let pc = model.corpus.pair_counts(model.spec);
    let n_contexts = pc.contexts().len();
    if n_contexts > cfg.analyze_limit {
        return Err(Error::NotEnumerable {
            contexts: n_contexts,
            limit: cfg.analyze_limit,
        }
        .into());
    }
    let dir = start("analyze", &cfg)?;
    let vocab = &model.corpus.vocab;
    let p = ConditionalProbMatrix::from_counts(&pc, vocab.len())?;
    // The direction results concern unit target vectors whatever the head.
    let composition = parse_enum::<Composition>("output.composition", &model.trained.output_composition)?;
    let t = TargetTable::<f64>::from_embeddings(&model.table, vocab.words(), composition, true)?;
    let targets = Array2::from_shape_vec((t.vocab_size(), t.dim()), t.as_slice().to_vec()).expect("table shape");

    let opts = DirectOptions {
        max_iters: cfg.analyze_max_iters,
        seed: cfg.seed,
        limit: cfg.analyze_limit,
        ..DirectOptions::default()
    };
    let direct = optimal_direction_check(&p, targets.view(), &opts)?;
    let encoder = encoder_direction_check(&p, targets.view(), &model.params, &model.embedder, cfg.analyze_limit)?;
    let rank = cfg.analyze_rank.min(p.n_contexts()).min(p.vocab_size());
    let projection = svd_projection_study(p.p.view(), rank, &[], cfg.analyze_random_projections, cfg.seed, cfg.analyze_center)?;
    let decode = decode_agreement(p.p.view(), targets.view(), metric)?;

    write_json(&dir.join("direction_direct.json"), &direct)?;
    write_json(&dir.join("direction_encoder.json"), &encoder)?;
    write_json(&dir.join("projection.json"), &projection)?;
    write_json(&dir.join("decode.json"), &decode)?;
    decode.write_disagreements_tsv(p.p.view(), BufWriter::new(File::create(dir.join("disagreements.tsv"))?))?;
    let text = [direct.render_text(), encoder.render_text(), projection.render_text(), decode.render_text()].join("\n");
    fs::write(dir.join("report.txt"), &text)?;

    println!("contexts {}", p.n_contexts());
    println!("direct optimization: weighted mean similarity {:.6}, min {:.6}", direct.weighted_mean, direct.min);
    println!("encoder: weighted mean similarity {:.6}, min {:.6}", encoder.weighted_mean, encoder.min);
    println!(
        "projection rank {}: svd error {:.6}, minimal {}",
        projection.rank, projection.svd_error, projection.svd_is_minimal
    );
    println!("decode agreement {:.4}", decode.agreement_rate);
    Ok(())
}

pub fn bench(config: Option<&Path>, overrides: &[(String, Value)]) -> Result<()> {
    let cfg = resolve(config, overrides)?;
    let layers = cfg
        .bench_layers
        .iter()
        .map(|l| l.parse::<LayerKind>().map_err(|_| usage(format!("bad layer kind {l:?} in bench.layers"))))
        .collect::<Result<Vec<_>>>()?;
    let sweep = SweepConfig {
        layers,
        vocabs: cfg.bench_vocabs.clone(),
        dim: cfg.bench_dim,
        batch: cfg.bench_batch,
        reps: cfg.bench_reps,
        timing: cfg.bench_timing,
        seed: cfg.seed,
        sampled_negatives: cfg.bench_negatives,
        distance: distance(&cfg)?,
    };
    let dir = start("bench", &cfg)?;
    let records = vocab_sweep(&sweep, |r| match &r.error {
        Some(e) => log::warn!("{} V={}: {e}", r.layer, r.vocab),
        None => log::info!("{} V={}: {:?} ns, {} flops", r.layer, r.vocab, r.median_ns, r.flops),
    })?;
    let mut csv = Vec::new();
    write_csv(&records, &mut csv)?;
    fs::write(dir.join("bench.csv"), &csv)?;
    let summary = BenchSummary {
        config_hash: cfg.hash("bench"),
        config: sweep,
        records,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

pub fn embed_svd(config: Option<&Path>, overrides: &[(String, Value)]) -> Result<()> {
    let cfg = resolve(config, overrides)?;
    if cfg.embedding_source != "svd" {
        return Err(usage("embed-svd needs embedding.source \"svd\""));
    }
    let corpus = read_corpus(&cfg)?;
    let dir = start("embed-svd", &cfg)?;
    let emb = svd_embedding(&cfg, &corpus, cfg.embedding_alpha)?;
    emb.table.save_text(dir.join(EMBEDDINGS_FILE))?;
    let mut files = vec![json!({ "alpha": cfg.embedding_alpha, "file": EMBEDDINGS_FILE })];
    if cfg.embedding_alpha_sweep {
        for alpha in [0.0, 0.5, 1.0] {
            let name = format!("embeddings-alpha-{alpha}.txt");
            svd_embedding(&cfg, &corpus, alpha)?.table.save_text(dir.join(&name))?;
            files.push(json!({ "alpha": alpha, "file": name }));
        }
    }
    let summary = json!({
        "words": emb.table.len(),
        "dim": emb.table.dim(),
        "rank": emb.rank,
        "rank_limited": emb.rank_limited,
        "singular_values": emb.singular_values,
        "files": files,
    });
    write_json(&dir.join("svd.json"), &summary)?;
    println!("{} words, dim {}, feature matrix rank {}", emb.table.len(), emb.table.dim(), emb.rank);
    Ok(())
}

pub fn pairs(config: Option<&Path>, overrides: &[(String, Value)]) -> Result<()> {
    let cfg = resolve(config, overrides)?;
    let corpus = read_corpus(&cfg)?;
    let spec = context_spec(&cfg)?;
    let dir = start("pairs", &cfg)?;
    let pc = corpus.pair_counts(spec);
    let mut out = BufWriter::new(File::create(dir.join("pairs.tsv"))?);
    pc.write_tsv(&corpus.vocab, spec.direction, &mut out)?;
    out.flush()?;
    println!("{} pairs, {} distinct (context, target) entries", pc.total(), pc.len());
    Ok(())
}
