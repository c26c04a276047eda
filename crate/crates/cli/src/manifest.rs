use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use claimattn::data::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::Command;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one run: enough to repeat it and to check the repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    /// Invocation with absolute input paths.
    pub invocation: Command,
    /// Effective configs after flag overrides.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    /// Checksums of input files.
    pub inputs: Vec<FileDigest>,
    /// Content checksums of data sets and splits.
    pub datasets: BTreeMap<String, String>,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<FileDigest>,
    pub metrics: Value,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::at(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| CliError::at(path, e))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(CliError::at(path, format!("unsupported manifest version {}", m.format_version)));
        }
        Ok(m)
    }

    pub fn artifact(&self, name: &str) -> Option<&FileDigest> {
        self.artifacts.iter().find(|a| a.path == Path::new(name))
    }
}

/// Collects outputs and input digests while a command runs.
#[derive(Debug)]
pub struct RunRecorder {
    pub out: PathBuf,
    pub config: serde_json::Map<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub datasets: BTreeMap<String, String>,
    pub artifacts: Vec<FileDigest>,
}

impl RunRecorder {
    pub fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| CliError::at(out, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            config: serde_json::Map::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            datasets: BTreeMap::new(),
            artifacts: Vec::new(),
        })
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::at(path, e))?;
        self.inputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn read_input_text(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read_input(path)?;
        String::from_utf8(bytes).map_err(|e| CliError::at(path, e))
    }

    pub fn config<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).expect("configs serialize to JSON");
        self.config.insert(key.to_string(), v);
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::at(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::at(&path, e))?;
        self.artifacts.retain(|a| a.path != Path::new(rel));
        self.artifacts.push(FileDigest {
            path: PathBuf::from(rel),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Records a file written by someone else, e.g. a saved model.
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let path = self.out.join(rel);
        let bytes = fs::read(&path).map_err(|e| CliError::at(&path, e))?;
        self.artifacts.push(FileDigest {
            path: PathBuf::from(rel),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn finish(self, invocation: Command, metrics: Value, wall_clock_secs: f64) -> Result<RunManifest> {
        let manifest = RunManifest {
            format_version: MANIFEST_VERSION,
            invocation,
            config: Value::Object(self.config),
            seeds: self.seeds,
            inputs: self.inputs,
            datasets: self.datasets,
            artifacts: self.artifacts,
            metrics,
            wall_clock_secs,
        };
        let path = self.out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::at(&path, e))?;
        Ok(manifest)
    }
}
