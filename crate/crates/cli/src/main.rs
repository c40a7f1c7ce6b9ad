//! `semfit` command-line driver.
//!
//! Exit codes: 0 success, 2 usage error, 3 contract violation, 4 numeric
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::parse_override;

/// Bad flags, unknown config keys, missing input files.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "semfit", version, about = "Train, evaluate, analyze and benchmark language-model output layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the encoder with the configured output layer.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Evaluate a checkpoint on its training corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report perplexity; an error for SemFit heads.
        #[arg(long)]
        perplexity: bool,
    },
    /// Direction, projection and decoding checks for a checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Output-layer cost sweep over vocabulary sizes.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated layer kinds.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<String>>,
        /// Comma-separated vocabulary sizes.
        #[arg(long, value_delimiter = ',')]
        vocabs: Option<Vec<usize>>,
        /// Fill only the deterministic columns.
        #[arg(long)]
        no_timing: bool,
    },
    /// Train SVD word embeddings on the corpus.
    EmbedSvd {
        #[command(flatten)]
        common: Common,
    },
    /// Export (context, target) pair counts as TSV.
    Pairs {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file with flat dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    set: Vec<(String, Value)>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory under which run directories are created.
    #[arg(long)]
    run_root: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Vec<(String, Value)> {
        let mut out = self.set.clone();
        if let Some(s) = self.seed {
            out.push(("seed".into(), Value::from(s)));
        }
        if let Some(c) = &self.corpus {
            out.push(("corpus.path".into(), Value::from(c.to_string_lossy().into_owned())));
        }
        if let Some(r) = &self.run_root {
            out.push(("run.root".into(), Value::from(r.to_string_lossy().into_owned())));
        }
        out
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { common, steps } => {
            let mut o = common.overrides();
            if let Some(s) = steps {
                o.push(("train.steps".into(), Value::from(s)));
            }
            commands::train(common.config.as_deref(), &o)
        }
        Command::Eval {
            common,
            checkpoint,
            perplexity,
        } => {
            let mut o = common.overrides();
            if perplexity {
                o.push(("eval.perplexity".into(), Value::from(true)));
            }
            commands::eval(common.config.as_deref(), checkpoint.as_deref(), &o)
        }
        Command::Analyze { common, checkpoint } => commands::analyze(common.config.as_deref(), checkpoint.as_deref(), &common.overrides()),
        Command::Bench {
            common,
            layers,
            vocabs,
            no_timing,
        } => {
            let mut o = common.overrides();
            if let Some(l) = layers {
                o.push(("bench.layers".into(), Value::from(l)));
            }
            if let Some(v) = vocabs {
                o.push(("bench.vocabs".into(), Value::from(v)));
            }
            if no_timing {
                o.push(("bench.timing".into(), Value::from(false)));
            }
            commands::bench(common.config.as_deref(), &o)
        }
        Command::EmbedSvd { common } => commands::embed_svd(common.config.as_deref(), &common.overrides()),
        Command::Pairs { common } => commands::pairs(common.config.as_deref(), &common.overrides()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<semfit::Error>() {
        Some(e) if e.is_numeric() => 4,
        Some(semfit::Error::Io(_) | semfit::Error::Parse { .. }) => 2,
        Some(_) => 3,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
