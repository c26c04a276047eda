//! Model files: a JSON manifest plus a blob of little-endian `f64` values.
//!
//! The manifest lists every parameter in registration order with its shape
//! and byte offset into the blob. Loading rebuilds the architecture from the
//! stored config and then checks that names, shapes and offsets agree before
//! copying values, so a mismatched or truncated blob is rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, Result, TrainingMeta};
use crate::data::{sha256_hex, PreprocessStats, FORMAT_VERSION, NUM_FACTORS};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub preprocess: PreprocessStats,
    pub code_vocab: usize,
    pub factor_vocab: usize,
    pub meta: TrainingMeta,
    pub weights_file: String,
    pub weights_sha256: String,
    pub weights_len: usize,
    pub params: Vec<ParamEntry>,
}

impl Model {
    /// Little-endian `f64` values of every parameter in registration order.
    pub fn weights_blob(&self) -> Vec<u8> {
        let mut blob = Vec::with_capacity(self.params.num_scalars() * 8);
        for t in self.params.tensors() {
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        blob
    }

    pub fn weights_checksum(&self) -> String {
        sha256_hex(&self.weights_blob())
    }

    pub fn manifest(&self) -> ModelManifest {
        let blob = self.weights_blob();
        let mut offset = 0;
        let params = self
            .params
            .iter()
            .map(|(name, t)| {
                let e = ParamEntry {
                    name: name.to_string(),
                    shape: t.shape(),
                    offset,
                };
                offset += t.len() * 8;
                e
            })
            .collect();
        ModelManifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            preprocess: self.preprocess,
            code_vocab: self.config.code_vocab,
            factor_vocab: NUM_FACTORS,
            meta: self.meta.clone(),
            weights_file: WEIGHTS_FILE.to_string(),
            weights_sha256: sha256_hex(&blob),
            weights_len: blob.len(),
            params,
        }
    }

    pub fn to_parts(&self) -> (String, Vec<u8>) {
        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        (manifest, self.weights_blob())
    }

    pub fn from_parts(manifest: &str, blob: &[u8]) -> Result<Self> {
        let m: ModelManifest =
            serde_json::from_str(manifest).map_err(|e| ModelError::Format(format!("manifest: {e}")))?;
        if m.format_version != FORMAT_VERSION {
            return Err(ModelError::Format(format!("unsupported format_version {}", m.format_version)));
        }
        if m.code_vocab != m.config.code_vocab || m.factor_vocab != NUM_FACTORS {
            return Err(ModelError::Format("vocabulary sizes disagree with config".into()));
        }
        if blob.len() != m.weights_len {
            return Err(ModelError::Format(format!(
                "weights blob has {} bytes, manifest says {}",
                blob.len(),
                m.weights_len
            )));
        }
        if sha256_hex(blob) != m.weights_sha256 {
            return Err(ModelError::Format("weights checksum mismatch".into()));
        }
        let preprocess = PreprocessStats::new(m.preprocess.log_min, m.preprocess.log_max)
            .map_err(|e| ModelError::Format(e.to_string()))?;
        let mut model = Model::build(m.config.clone())?;
        if model.params.len() != m.params.len() {
            return Err(ModelError::Format(format!(
                "config defines {} parameters, manifest lists {}",
                model.params.len(),
                m.params.len()
            )));
        }
        let mut expected_offset = 0usize;
        for (i, entry) in m.params.iter().enumerate() {
            let name = &model.params.names()[i];
            let shape = model.params.tensors()[i].shape();
            if &entry.name != name || entry.shape != shape {
                return Err(ModelError::Format(format!(
                    "parameter {i}: manifest has {} {:?}, config expects {name} {shape:?}",
                    entry.name, entry.shape
                )));
            }
            if entry.offset != expected_offset {
                return Err(ModelError::Format(format!(
                    "parameter {name}: offset {} but expected {expected_offset}",
                    entry.offset
                )));
            }
            let n = shape[0] * shape[1];
            let bytes = blob
                .get(entry.offset..entry.offset + n * 8)
                .ok_or_else(|| ModelError::Format(format!("parameter {name} runs past the blob")))?;
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape[0], shape[1], data)
                .map_err(|e| ModelError::Format(format!("parameter {name}: {e}")))?;
            model.params.tensors_mut()[i] = t;
            expected_offset += n * 8;
        }
        if expected_offset != blob.len() {
            return Err(ModelError::Format("trailing bytes in weights blob".into()));
        }
        model.preprocess = preprocess;
        model.meta = m.meta;
        Ok(model)
    }

    /// Writes `model.json` and `weights.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (manifest, blob) = self.to_parts();
        fs::write(dir.join(WEIGHTS_FILE), blob)?;
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: ModelManifest =
            serde_json::from_str(&manifest).map_err(|e| ModelError::Format(format!("manifest: {e}")))?;
        if m.weights_file.contains(['/', '\\']) || m.weights_file.starts_with('.') {
            return Err(ModelError::Format(format!("weights_file {:?} must be a plain file name", m.weights_file)));
        }
        let blob = fs::read(dir.join(&m.weights_file))?;
        Self::from_parts(&manifest, &blob)
    }
}
