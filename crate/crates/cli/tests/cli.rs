use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use semfit::checkpoint::Checkpoint;
use semfit::encoder::{EncoderDims, EncoderParams};

const BIN: &str = env!("CARGO_BIN_EXE_semfit");

fn corpus_lines(n: usize) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/synthetic_corpus.txt");
    fs::read_to_string(path).unwrap().lines().take(n).map(|l| format!("{l}\n")).collect()
}

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new(corpus: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("corpus.txt"), corpus).unwrap();
        Sandbox { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN).current_dir(self.dir.path()).env("RUST_LOG", "warn").args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    /// The directory named on the first stdout line.
    fn run_dir(&self, stdout: &str) -> PathBuf {
        let line = stdout.lines().next().unwrap();
        self.path(line.strip_prefix("run directory: ").unwrap())
    }

    fn json(&self, path: &Path) -> Value {
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
    }
}

const SMALL: &[&str] = &["--set", "embedding.dim=16", "--set", "embedding.features=100", "--set", "encoder.hidden=32"];

fn train_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut a = vec!["train", "--seed", "5", "--corpus", "corpus.txt"];
    if !extra.contains(&"--run-root") {
        a.extend(["--run-root", "runs"]);
    }
    a.extend_from_slice(SMALL);
    a.extend_from_slice(extra);
    a
}

#[test]
fn zero_steps_checkpoint_is_the_initialization() {
    let sb = Sandbox::new(&corpus_lines(100));
    let out = sb.ok(&train_args(&["--steps", "0"]));
    let ck = Checkpoint::load(sb.run_dir(&out).join("checkpoint.ck")).unwrap();
    let dims = EncoderDims {
        k: 2,
        input_dim: 16,
        hidden: 32,
        output_dim: 16,
    };
    let init = EncoderParams::init(5, dims).unwrap();
    let mut loaded = EncoderParams::zeros(dims);
    ck.load_encoder(&mut loaded).unwrap();
    for (a, b) in init.tensors().iter().zip(loaded.tensors()) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }
}

#[test]
fn same_seed_gives_identical_curve_and_config_echo_replays() {
    let sb = Sandbox::new(&corpus_lines(100));
    let a = sb.run_dir(&sb.ok(&train_args(&["--steps", "50", "--run-root", "a"])));
    let b = sb.run_dir(&sb.ok(&train_args(&["--steps", "50", "--run-root", "b"])));
    assert_eq!(a.file_name(), b.file_name(), "run directory names come from the config hash");
    let curve = fs::read(a.join("curve.csv")).unwrap();
    assert_eq!(curve, fs::read(b.join("curve.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&curve).lines().count(), 51);

    // the echoed config reproduces the run by itself
    let echo = a.join("config.json");
    let c = sb.run_dir(&sb.ok(&["train", "--config", echo.to_str().unwrap(), "--run-root", "c"]));
    assert_eq!(c.file_name(), a.file_name());
    assert_eq!(fs::read(c.join("curve.csv")).unwrap(), curve);
    // checkpoint meta records run.root, so compare the weights rather than the bytes
    let weights = |dir: &Path| {
        let mut p = EncoderParams::zeros(EncoderDims {
            k: 2,
            input_dim: 16,
            hidden: 32,
            output_dim: 16,
        });
        Checkpoint::load(dir.join("checkpoint.ck")).unwrap().load_encoder(&mut p).unwrap();
        p.tensors().iter().flat_map(|t| t.to_vec()).collect::<Vec<f64>>()
    };
    assert_eq!(weights(&c), weights(&a));
}

#[test]
fn semfit_training_lowers_the_loss() {
    let sb = Sandbox::new(&corpus_lines(200));
    let dir = sb.run_dir(&sb.ok(&train_args(&["--steps", "2000"])));
    let m = sb.json(&dir.join("metrics.json"));
    let (before, after) = (m["initial"]["mean_loss"].as_f64().unwrap(), m["final"]["mean_loss"].as_f64().unwrap());
    assert!(after < before, "{before} -> {after}");
    assert_eq!(m["params"]["output_trainable"], 0);
}

fn four_word_corpus() -> String {
    // every word equally often, in no particular order
    let words = ["a", "b", "c", "d"];
    (0..200).map(|i| (0..8).map(|j| words[(i * 7 + j * 3 + i * j) % 4]).collect::<Vec<_>>().join(" ") + "\n").collect()
}

#[test]
fn untrained_softmax_on_four_words_has_perplexity_four() {
    let sb = Sandbox::new(&four_word_corpus());
    let dir = sb.run_dir(&sb.ok(&[
        "train", "--seed", "1", "--corpus", "corpus.txt", "--run-root", "runs", "--steps", "0", "--set", "output.kind=softmax", "--set",
        "embedding.dim=4", "--set", "embedding.features=4",
    ]));
    let ck = dir.join("checkpoint.ck");
    let out = sb.ok(&["eval", "--checkpoint", ck.to_str().unwrap(), "--perplexity"]);
    let report = sb.json(&sb.run_dir(&out).join("eval.json"));
    let ppl = report["perplexity"].as_f64().unwrap();
    // the output weights start small but not at zero, so a little above 4
    assert!(ppl > 3.95 && ppl < 4.4, "{ppl}");
}

#[test]
fn trained_softmax_beats_unigram() {
    let sb = Sandbox::new(&corpus_lines(100));
    let dir = sb.run_dir(&sb.ok(&train_args(&["--steps", "1500", "--set", "output.kind=softmax", "--set", "train.lr=0.2"])));
    let out = sb.ok(&["eval", "--checkpoint", dir.join("checkpoint.ck").to_str().unwrap()]);
    let report = sb.json(&sb.run_dir(&out).join("eval.json"));
    let (ppl, uni) = (report["perplexity"].as_f64().unwrap(), report["unigram_perplexity"].as_f64().unwrap());
    assert!(ppl < uni, "{ppl} vs unigram {uni}");
}

#[test]
fn semfit_perplexity_is_a_contract_error() {
    let sb = Sandbox::new(&corpus_lines(50));
    let dir = sb.run_dir(&sb.ok(&train_args(&["--steps", "0"])));
    let ck = dir.join("checkpoint.ck");
    let out = sb.run(&["eval", "--checkpoint", ck.to_str().unwrap(), "--perplexity"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("perplexity undefined for SemFit"));
    // without the flag SemFit reports its proxy metrics
    let out = sb.ok(&["eval", "--checkpoint", ck.to_str().unwrap()]);
    let report = sb.json(&sb.run_dir(&out).join("eval.json"));
    assert!(report["decode_accuracy"].is_number());
    assert!(report.get("perplexity").is_none());
}

#[test]
fn analyze_direct_and_untrained_encoder() {
    let sb = Sandbox::new(&corpus_lines(60));
    let dir = sb.run_dir(&sb.ok(&train_args(&["--steps", "0"])));
    let ck = dir.join("checkpoint.ck");
    let out = sb.ok(&["analyze", "--checkpoint", ck.to_str().unwrap()]);
    let adir = sb.run_dir(&out);
    let direct = sb.json(&adir.join("direction_direct.json"));
    assert!(direct["min"].as_f64().unwrap() > 0.999, "{}", direct["min"]);
    let encoder = sb.json(&adir.join("direction_encoder.json"));
    let sims: Vec<f64> = encoder["contexts"].as_array().unwrap().iter().filter_map(|c| c["similarity"].as_f64()).collect();
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    assert!(mean.abs() < 0.3, "untrained encoder mean similarity {mean}");
    for f in ["projection.json", "decode.json", "disagreements.tsv", "report.txt"] {
        assert!(adir.join(f).is_file(), "{f}");
    }
    let proj = sb.json(&adir.join("projection.json"));
    assert_eq!(proj["svd_is_minimal"], true);
}

#[test]
fn usage_errors_exit_with_two() {
    let sb = Sandbox::new(&corpus_lines(20));
    let out = sb.run(&["analyze", "--checkpoint", "missing.ck"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sb.run(&["train", "--corpus", "corpus.txt", "--steps", "1"]);
    assert_eq!(out.status.code(), Some(2), "seed is mandatory");
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    let out = sb.run(&["train", "--seed", "1", "--corpus", "corpus.txt", "--set", "train.stepz=3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sb.run(&["train", "--seed", "1", "--corpus", "nowhere.txt"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sb.run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

fn csv_rows(sb: &Sandbox, stdout: &str) -> Vec<Vec<String>> {
    let text = fs::read_to_string(sb.run_dir(stdout).join("bench.csv")).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn bench_grid_filtering_and_determinism() {
    let sb = Sandbox::new("");
    let full = sb.ok(&["bench", "--seed", "0", "--run-root", "r1", "--no-timing"]);
    let rows = csv_rows(&sb, &full);
    assert_eq!(rows.len(), 9);
    let semfit: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == "semfit").collect();
    assert!(semfit.iter().all(|r| r[5] == semfit[0][5] && r[6] == "0" && r[7] == "0"));

    let only = sb.ok(&["bench", "--seed", "0", "--run-root", "r2", "--no-timing", "--layers", "semfit"]);
    let only_rows = csv_rows(&sb, &only);
    assert_eq!(only_rows.len(), 3);
    assert!(only_rows.iter().all(|r| r[0] == "semfit"));

    let again = sb.ok(&["bench", "--seed", "0", "--run-root", "r3", "--no-timing"]);
    let flops = |rows: &[Vec<String>]| rows.iter().map(|r| r[5].clone()).collect::<Vec<_>>();
    assert_eq!(flops(&rows), flops(&csv_rows(&sb, &again)));
    let summary = sb.json(&sb.run_dir(&full).join("summary.json"));
    assert_eq!(summary["records"].as_array().unwrap().len(), 9);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn embed_svd_and_pairs_exports() {
    let sb = Sandbox::new(&corpus_lines(80));
    let text = fs::read_to_string(sb.path("corpus.txt")).unwrap();
    let tokens = text.split_whitespace().count();

    let out = sb.ok(&["pairs", "--seed", "0", "--corpus", "corpus.txt", "--run-root", "runs"]);
    let tsv = fs::read_to_string(sb.run_dir(&out).join("pairs.tsv")).unwrap();
    let total: u64 = tsv.lines().map(|l| l.rsplit('\t').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total as usize, tokens, "one pair per token");

    let mut args = vec!["embed-svd", "--seed", "0", "--corpus", "corpus.txt", "--run-root", "runs", "--set", "embedding.alpha_sweep=true"];
    args.extend_from_slice(SMALL);
    let dir = sb.run_dir(&sb.ok(&args));
    let summary = sb.json(&dir.join("svd.json"));
    assert_eq!(summary["dim"], 16);
    assert_eq!(summary["files"].as_array().unwrap().len(), 4);
    let table = semfit::embedding::load_text_embeddings(dir.join("embeddings-alpha-0.5.txt")).unwrap();
    assert_eq!(table.dim(), 16);
}
