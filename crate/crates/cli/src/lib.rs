//! Reproducible command-line runs on top of `claimattn`.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`. The
//! manifest stores the full invocation, effective configs, seeds and SHA-256
//! digests of inputs and outputs; `replay` reruns a manifest single-threaded
//! and fails unless every output is byte-identical.

pub mod args;
mod commands;
pub mod error;
pub mod manifest;
pub mod plot;

use std::path::Path;
use std::time::Instant;

pub use args::{Cli, Command, Common};
pub use error::{CliError, Result};
pub use manifest::{RunManifest, MANIFEST_FILE};

/// Result of one command.
#[derive(Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    /// Human-readable summary for standard output.
    pub report: String,
}

/// Runs `command`, writing its outputs and manifest.
pub fn run(command: Command) -> Result<Outcome> {
    let started = Instant::now();
    let command = absolutize(command)?;
    if command.common().jobs == 0 {
        return Err(CliError::Input("--jobs must be at least 1".into()));
    }
    let (rec, metrics, report) = match &command {
        Command::Generate(a) => commands::generate(a)?,
        Command::Train(a) => commands::train(a)?,
        Command::Evaluate(a) => commands::evaluate(a)?,
        Command::Compare(a) => commands::compare(a)?,
        Command::Inspect(a) => commands::inspect(a)?,
        Command::Replay(a) => return commands::replay(a),
    };
    let manifest = rec.finish(command, metrics, started.elapsed().as_secs_f64())?;
    Ok(Outcome { manifest, report })
}

fn abs(p: &Path) -> Result<std::path::PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::at(p, e))
}

/// Makes every path in the invocation absolute so a manifest can be replayed
/// from any working directory.
fn absolutize(mut command: Command) -> Result<Command> {
    match &mut command {
        Command::Generate(a) => a.spec = abs(&a.spec)?,
        Command::Train(a) => {
            a.data = abs(&a.data)?;
            a.model = abs(&a.model)?;
            a.train_config = abs(&a.train_config)?;
        }
        Command::Evaluate(a) => {
            a.data = abs(&a.data)?;
            a.model_dir = abs(&a.model_dir)?;
        }
        Command::Compare(a) => {
            a.data = abs(&a.data)?;
            a.train_config = abs(&a.train_config)?;
            for m in &mut a.models {
                *m = abs(m)?;
            }
        }
        Command::Inspect(a) => {
            a.model_dir = abs(&a.model_dir)?;
            a.claim = abs(&a.claim)?;
        }
        Command::Replay(a) => a.manifest = abs(&a.manifest)?,
    }
    let out = abs(&command.common().out)?;
    command.common_mut().out = out;
    Ok(command)
}
