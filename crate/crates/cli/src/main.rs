//! `bnbp`: partition simulation, topic-model training and evaluation.
//!
//! Every flag may also come from a `--config FILE` of `key = value` lines;
//! flags given on the command line win.

mod commands;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "bnbp", version, about = "Beta-negative binomial process partitions and topic models")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines supplying default flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gibbs-sample a grouped partition with the prediction rule and write
    /// the final count matrix.
    SimulatePartition(SimulateArgs),
    /// Draw count matrices from the prior.
    PriorMatrix(PriorArgs),
    /// Train the BNBP topic model on a heldout split of a corpus.
    TrainBnbp(TrainBnbpArgs),
    /// Train fixed-K collapsed LDA on a heldout split of a corpus.
    TrainLda(TrainLdaArgs),
    /// Resume a checkpointed chain and score heldout counts.
    EvalPerplexity(EvalArgs),
    /// Train one chain per (eta, chain) pair and tabulate K_J and perplexity.
    SweepEta(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Uci,
    Lines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Bnbp,
    Lda,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PartitionArgs {
    /// Number of groups J.
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    /// Concentration c.
    #[arg(long, default_value_t = 2.0)]
    pub c: f64,
    /// Dispersion r_j: one value for every group, or J comma-separated values.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub r: Vec<f64>,
    /// Mass γ0. When absent it is chosen so the prior mean of K_J equals
    /// --expected-k.
    #[arg(long)]
    pub gamma0: Option<f64>,
    #[arg(long, default_value_t = 12.0)]
    pub expected_k: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub partition: PartitionArgs,
    /// Data points per group.
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    #[arg(long, default_value_t = 2500)]
    pub iters: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PriorArgs {
    #[command(flatten)]
    pub partition: PartitionArgs,
    /// Number of independent matrices.
    #[arg(long, default_value_t = 1)]
    pub draws: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Uci)]
    pub format: Format,
    /// Vocabulary file; defaults to vocab.X beside docword.X, else FILE.vocab.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Keep terms that occur in at least this many documents.
    #[arg(long, default_value_t = 5)]
    pub min_doc_freq: usize,
    /// Fraction of each document's words used for training.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 2500)]
    pub iters: usize,
    /// Iterations discarded before the K_J posterior mean; defaults to
    /// iters − collect.
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Final iterations from which posterior draws are collected.
    #[arg(long, default_value_t = 1500)]
    pub collect: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainBnbpArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LdaArgs {
    /// Number of topics K.
    #[arg(long, default_value_t = 50)]
    pub topics: usize,
    /// Total Dirichlet concentration α; each topic gets α/K.
    #[arg(long, default_value_t = 50.0)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainLdaArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    #[command(flatten)]
    pub lda: LdaArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Heldout counts in UCI docword form, as written by the train commands.
    #[arg(long)]
    pub test: PathBuf,
    /// Posterior draws to collect while resuming the chain.
    #[arg(long, default_value_t = 100)]
    pub collect: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_enum, default_value_t = Model::Bnbp)]
    pub model: Model,
    /// Comma-separated η grid.
    #[arg(long, value_delimiter = ',', default_value = "0.005,0.01,0.05,0.1,0.25,0.5")]
    pub eta: Vec<f64>,
    /// Independent chains per grid point.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[command(flatten)]
    pub lda: LdaArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Reads `key = value` lines (blank lines and `#` comments skipped) into
/// `--key=value` arguments.
fn config_args(path: &Path) -> Result<Vec<OsString>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected `key = value`", path.display(), i + 1))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key == "config" {
            return Err(format!("{}:{}: config files cannot nest", path.display(), i + 1));
        }
        out.push(OsString::from(format!("--{key}={}", value.trim())));
    }
    Ok(out)
}

/// Splices the config file's flags in right after the subcommand so that
/// later command-line occurrences override them.
fn merged_args(raw: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut config = None;
    let mut iter = raw.iter().enumerate().skip(1);
    while let Some((_, a)) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if let Some(v) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if s == "--config" {
            config = iter.next().map(|(_, v)| PathBuf::from(v));
        }
    }
    let Some(config) = config else {
        return Ok(raw);
    };
    let extra = config_args(&config)?;
    let sub = raw
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1);
    // A subcommand position is only trustworthy if nothing before it takes a
    // value; `--config FILE` is the one global flag that does.
    let sub = sub.and_then(|p| {
        let prev = raw[p - 1].to_string_lossy();
        if prev == "--config" {
            raw.iter()
                .skip(p + 1)
                .position(|a| !a.to_string_lossy().starts_with('-'))
                .map(|q| q + p + 1)
        } else {
            Some(p)
        }
    });
    let Some(sub) = sub else {
        return Ok(raw);
    };
    let mut out: Vec<OsString> = raw[..=sub].to_vec();
    out.extend(extra);
    out.extend_from_slice(&raw[sub + 1..]);
    Ok(out)
}

fn main() -> ExitCode {
    let args = match merged_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match commands::run(&cli) {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
