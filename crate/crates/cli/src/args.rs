use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "claimattn", version, about = "Train and compare set-based claim fraud classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// A complete invocation. Stored verbatim in every run manifest so the run
/// can be replayed.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Write a synthetic claims data set from a generator spec.
    Generate(GenerateArgs),
    /// Train one model (or run a random search) and save it.
    Train(TrainArgs),
    /// Score a saved model on a data set.
    Evaluate(EvaluateArgs),
    /// Train several model configs on shared splits and tabulate test metrics.
    Compare(CompareArgs),
    /// Print the probability, pooling weights and attention matrix of one claim.
    Inspect(InspectArgs),
    /// Rerun a command from its manifest and check the outputs are identical.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Compare(_) => "compare",
            Command::Inspect(_) => "inspect",
            Command::Replay(_) => "replay",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Generate(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Evaluate(a) => &a.common,
            Command::Compare(a) => &a.common,
            Command::Inspect(a) => &a.common,
            Command::Replay(a) => &a.common,
        }
    }

    pub fn common_mut(&mut self) -> &mut Common {
        match self {
            Command::Generate(a) => &mut a.common,
            Command::Train(a) => &mut a.common,
            Command::Evaluate(a) => &mut a.common,
            Command::Compare(a) => &mut a.common,
            Command::Inspect(a) => &mut a.common,
            Command::Replay(a) => &mut a.common,
        }
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config files.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clerk cost per flagged claim.
    #[arg(long)]
    pub k: Option<f64>,
    /// Claims scoring strictly above this probability are flagged.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Maximum number of worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Generator spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Claims data set (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Model config (JSON). With `--search`, only its encoder and code
    /// vocabulary are used.
    #[arg(long)]
    pub model: PathBuf,
    /// Training config (JSON).
    #[arg(long)]
    pub train_config: PathBuf,
    /// Number of random-search trials instead of a single fit.
    #[arg(long)]
    pub search: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    pub model_dir: PathBuf,
    /// Part of the data to score. Anything but `all` needs `--seed` to
    /// reproduce the training split.
    #[arg(long, value_enum, default_value_t = SplitPart::All)]
    pub split: SplitPart,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model config (JSON); repeat for each variant.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub train_config: PathBuf,
    /// Comma-separated run seeds; each seed gets its own split and
    /// initialization. Defaults to `--seed` or the training config's seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct InspectArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    /// One claim as JSON, in the data set's line format.
    #[arg(long)]
    pub claim: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub common: Common,
}
