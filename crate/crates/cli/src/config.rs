//! Run configuration: a flat JSON object with dotted keys. Resolution
//! layers built-in defaults, then a config file, then command-line
//! overrides; the result is written back out in full so a run can be
//! repeated from its own `config.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(rename = "run.root")]
    pub run_root: PathBuf,
    #[serde(rename = "corpus.path")]
    pub corpus_path: Option<PathBuf>,
    #[serde(rename = "checkpoint")]
    pub checkpoint: Option<PathBuf>,

    #[serde(rename = "context.direction")]
    pub context_direction: String,
    #[serde(rename = "context.k")]
    pub context_k: usize,

    /// `svd` trains embeddings on the corpus; `file` reads `embedding.path`.
    #[serde(rename = "embedding.source")]
    pub embedding_source: String,
    #[serde(rename = "embedding.path")]
    pub embedding_path: Option<PathBuf>,
    #[serde(rename = "embedding.buckets")]
    pub embedding_buckets: Option<PathBuf>,
    #[serde(rename = "embedding.dim")]
    pub embedding_dim: usize,
    #[serde(rename = "embedding.alpha")]
    pub embedding_alpha: f64,
    /// Number of frequent neighbour words used as SVD features.
    #[serde(rename = "embedding.features")]
    pub embedding_features: usize,
    #[serde(rename = "embedding.alpha_sweep")]
    pub embedding_alpha_sweep: bool,

    #[serde(rename = "encoder.hidden")]
    pub encoder_hidden: usize,

    #[serde(rename = "output.kind")]
    pub output_kind: String,
    #[serde(rename = "output.distance")]
    pub output_distance: String,
    #[serde(rename = "output.nllvmf.lambda1")]
    pub output_lambda1: f64,
    #[serde(rename = "output.nllvmf.lambda2")]
    pub output_lambda2: f64,
    #[serde(rename = "output.composition")]
    pub output_composition: String,
    #[serde(rename = "output.negatives")]
    pub output_negatives: usize,
    #[serde(rename = "output.proposal")]
    pub output_proposal: String,
    /// `null` picks the default policy for the vocabulary size.
    #[serde(rename = "output.adaptive.cutoffs")]
    pub output_adaptive_cutoffs: Option<Vec<usize>>,
    #[serde(rename = "output.adaptive.divisors")]
    pub output_adaptive_divisors: Option<Vec<usize>>,

    #[serde(rename = "train.steps")]
    pub train_steps: u64,
    #[serde(rename = "train.batch")]
    pub train_batch: usize,
    #[serde(rename = "train.lr")]
    pub train_lr: f64,
    #[serde(rename = "train.warmup")]
    pub train_warmup: u64,
    #[serde(rename = "train.eval_examples")]
    pub train_eval_examples: usize,

    #[serde(rename = "eval.perplexity")]
    pub eval_perplexity: bool,

    #[serde(rename = "analyze.limit")]
    pub analyze_limit: usize,
    #[serde(rename = "analyze.max_iters")]
    pub analyze_max_iters: usize,
    #[serde(rename = "analyze.rank")]
    pub analyze_rank: usize,
    #[serde(rename = "analyze.random_projections")]
    pub analyze_random_projections: usize,
    #[serde(rename = "analyze.center")]
    pub analyze_center: bool,
    #[serde(rename = "analyze.metric")]
    pub analyze_metric: String,

    #[serde(rename = "bench.layers")]
    pub bench_layers: Vec<String>,
    #[serde(rename = "bench.vocabs")]
    pub bench_vocabs: Vec<usize>,
    #[serde(rename = "bench.dim")]
    pub bench_dim: usize,
    #[serde(rename = "bench.batch")]
    pub bench_batch: usize,
    #[serde(rename = "bench.reps")]
    pub bench_reps: usize,
    #[serde(rename = "bench.timing")]
    pub bench_timing: bool,
    #[serde(rename = "bench.negatives")]
    pub bench_negatives: usize,
}

impl RunConfig {
    /// Everything but the seed, which has no default.
    fn defaults() -> Map<String, Value> {
        let cfg = RunConfig {
            seed: 0,
            run_root: PathBuf::from("runs"),
            corpus_path: None,
            checkpoint: None,
            context_direction: "forward".into(),
            context_k: 2,
            embedding_source: "svd".into(),
            embedding_path: None,
            embedding_buckets: None,
            embedding_dim: 32,
            embedding_alpha: 0.5,
            embedding_features: 500,
            embedding_alpha_sweep: false,
            encoder_hidden: 64,
            output_kind: "semfit".into(),
            output_distance: "cosine".into(),
            output_lambda1: 0.02,
            output_lambda2: 1.0,
            output_composition: "word-and-subword".into(),
            output_negatives: 8192,
            output_proposal: "log-uniform".into(),
            output_adaptive_cutoffs: None,
            output_adaptive_divisors: None,
            train_steps: 2000,
            train_batch: 32,
            train_lr: 0.5,
            train_warmup: 100,
            train_eval_examples: 5000,
            eval_perplexity: false,
            analyze_limit: 20_000,
            analyze_max_iters: 20_000,
            analyze_rank: 10,
            analyze_random_projections: 20,
            analyze_center: false,
            analyze_metric: "cosine".into(),
            bench_layers: vec!["semfit".into(), "adaptive".into(), "softmax".into()],
            bench_vocabs: vec![40_000, 200_000, 1_000_000],
            bench_dim: 300,
            bench_batch: 16,
            bench_reps: 5,
            bench_timing: true,
            bench_negatives: 8192,
        };
        let Value::Object(mut map) = serde_json::to_value(cfg).expect("config serializes") else {
            unreachable!("config is a struct")
        };
        map.remove("seed");
        map
    }

    /// Resolves `base` (a config file's contents, or a checkpoint's recorded
    /// config) plus `overrides` on top of the defaults.
    pub fn resolve(base: Option<Map<String, Value>>, overrides: &[(String, Value)]) -> Result<RunConfig, UsageError> {
        let mut map = Self::defaults();
        let known = |k: &str, map: &Map<String, Value>| k == "seed" || map.contains_key(k);
        for (k, v) in base.into_iter().flatten().chain(overrides.iter().cloned()) {
            if !known(&k, &map) {
                return Err(UsageError(format!("unknown config key {k:?}")));
            }
            map.insert(k, v);
        }
        if !map.contains_key("seed") {
            return Err(UsageError("a seed is required (--seed or \"seed\" in the config file)".into()));
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| UsageError(format!("bad config value: {e}")))
    }

    pub fn read_file(path: &Path) -> Result<Map<String, Value>, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(_) => Err(UsageError(format!("{} is not a JSON object", path.display()))),
            Err(e) => Err(UsageError(format!("cannot parse config {}: {e}", path.display()))),
        }
    }

    pub fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        }
    }

    pub fn to_pretty_json(&self) -> String {
        // serde_json keeps struct field order; sort for a stable, diffable echo
        let sorted: std::collections::BTreeMap<String, Value> = self.to_map().into_iter().collect();
        serde_json::to_string_pretty(&sorted).expect("config serializes")
    }

    /// SHA-256 over the command and the sorted config, minus `run.root`,
    /// which only says where the run lives.
    pub fn hash(&self, command: &str) -> String {
        let mut map = self.to_map();
        map.remove("run.root");
        let sorted: std::collections::BTreeMap<String, Value> = map.into_iter().collect();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(&sorted).expect("config serializes"));
        hex::encode(h.finalize())
    }

    /// `<run.root>/<command>-<first 16 hex digits of the hash>`.
    pub fn run_dir(&self, command: &str) -> PathBuf {
        self.run_root.join(format!("{command}-{}", &self.hash(command)[..16]))
    }
}

/// Parses `KEY=VALUE`; the value is read as JSON when it parses and as a
/// plain string otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
    Ok((k.trim().to_owned(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        assert!(RunConfig::resolve(None, &[]).is_err());
        let cfg = RunConfig::resolve(None, &[("seed".into(), Value::from(3))]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.context_k, 2);
    }

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let mut file = Map::new();
        file.insert("seed".into(), Value::from(1));
        file.insert("train.steps".into(), Value::from(10));
        let cfg = RunConfig::resolve(Some(file.clone()), &[parse_override("train.steps=20").unwrap()]).unwrap();
        assert_eq!(cfg.train_steps, 20);
        file.insert("train.stepz".into(), Value::from(1));
        assert!(RunConfig::resolve(Some(file), &[]).is_err());
    }

    #[test]
    fn echo_round_trips_and_hash_ignores_root() {
        let cfg = RunConfig::resolve(None, &[("seed".into(), Value::from(9))]).unwrap();
        let back: Map<String, Value> = serde_json::from_str(&cfg.to_pretty_json()).unwrap();
        assert_eq!(RunConfig::resolve(Some(back), &[]).unwrap(), cfg);
        let mut moved = cfg.clone();
        moved.run_root = PathBuf::from("/elsewhere");
        assert_eq!(cfg.hash("train"), moved.hash("train"));
        assert_ne!(cfg.hash("train"), cfg.hash("eval"));
    }

    #[test]
    fn override_values_parse_as_json_or_string() {
        assert_eq!(parse_override("a=3").unwrap().1, Value::from(3));
        assert_eq!(parse_override("a=cosine").unwrap().1, Value::from("cosine"));
        assert_eq!(parse_override("a=[1,2]").unwrap().1, serde_json::json!([1, 2]));
        assert!(parse_override("novalue").is_err());
    }
}
