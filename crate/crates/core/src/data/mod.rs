//! Claims, datasets and their file formats.

mod batching;
mod generator;
mod preprocess;
mod split;

pub use batching::batch_by_length;
pub use generator::{generate_dataset, generate_with_latents, ClaimLatent, GeneratorSpec, NUM_FACTORS};
pub use preprocess::{fit_preprocess, EncodedClaim, PreprocessStats};
pub use split::{split, SplitFractions};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
pub const MAX_ROWS: usize = 100;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid claim: {0}")]
    InvalidClaim(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One billed operation. Serialized as `[code_id, factor_id, amount]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(u32, u32, f64)", into = "(u32, u32, f64)")]
pub struct ClaimRow {
    pub code_id: u32,
    pub factor_id: u8,
    pub amount: f64,
}

impl ClaimRow {
    pub fn new(code_id: u32, factor_id: u8, amount: f64) -> Result<Self> {
        if usize::from(factor_id) >= NUM_FACTORS {
            return Err(DataError::InvalidClaim(format!(
                "factor_id {factor_id} outside 0..{NUM_FACTORS}"
            )));
        }
        if !(amount > 0.0) || !amount.is_finite() {
            return Err(DataError::InvalidClaim(format!(
                "amount must be positive and finite, got {amount}"
            )));
        }
        Ok(Self {
            code_id,
            factor_id,
            amount,
        })
    }
}

impl TryFrom<(u32, u32, f64)> for ClaimRow {
    type Error = DataError;

    fn try_from((code, factor, amount): (u32, u32, f64)) -> Result<Self> {
        let factor = u8::try_from(factor)
            .map_err(|_| DataError::InvalidClaim(format!("factor_id {factor} out of range")))?;
        ClaimRow::new(code, factor, amount)
    }
}

impl From<ClaimRow> for (u32, u32, f64) {
    fn from(r: ClaimRow) -> Self {
        (r.code_id, u32::from(r.factor_id), r.amount)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClaimRecord {
    #[serde(default = "default_version")]
    format_version: u32,
    id: String,
    rows: Vec<ClaimRow>,
    label: u8,
    correction: f64,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

/// A claim: 1 to 100 rows, a fraud label and the correction amount.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClaimRecord", into = "ClaimRecord")]
pub struct Claim {
    pub id: String,
    pub rows: Vec<ClaimRow>,
    pub label: u8,
    pub correction: f64,
}

impl Claim {
    pub fn new(id: impl Into<String>, rows: Vec<ClaimRow>, label: u8, correction: f64) -> Result<Self> {
        let claim = Self {
            id: id.into(),
            rows,
            label,
            correction,
        };
        claim.validate()?;
        Ok(claim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() || self.rows.len() > MAX_ROWS {
            return Err(DataError::InvalidClaim(format!(
                "claim {:?} has {} rows, expected 1..={MAX_ROWS}",
                self.id,
                self.rows.len()
            )));
        }
        if self.label > 1 {
            return Err(DataError::InvalidClaim(format!("label {} is not 0 or 1", self.label)));
        }
        if !self.correction.is_finite() || self.correction < 0.0 {
            return Err(DataError::InvalidClaim(format!(
                "correction {} must be finite and nonnegative",
                self.correction
            )));
        }
        if (self.label == 1) != (self.correction > 0.0) {
            return Err(DataError::InvalidClaim(format!(
                "claim {:?}: label {} inconsistent with correction {}",
                self.id, self.label, self.correction
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total_amount(&self) -> f64 {
        self.rows.iter().map(|r| r.amount).sum()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("claim serialization cannot fail")
    }
}

impl TryFrom<ClaimRecord> for Claim {
    type Error = DataError;

    fn try_from(r: ClaimRecord) -> Result<Self> {
        if r.format_version != FORMAT_VERSION {
            return Err(DataError::InvalidClaim(format!(
                "unsupported format_version {}",
                r.format_version
            )));
        }
        Claim::new(r.id, r.rows, r.label, r.correction)
    }
}

impl From<Claim> for ClaimRecord {
    fn from(c: Claim) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            id: c.id,
            rows: c.rows,
            label: c.label,
            correction: c.correction,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub claims: Vec<Claim>,
}

impl Dataset {
    pub fn new(claims: Vec<Claim>) -> Self {
        Self { claims }
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.claims.iter().filter(|c| c.label == 1).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.claims.iter().map(|c| c.label).collect()
    }

    pub fn corrections(&self) -> Vec<f64> {
        self.claims.iter().map(|c| c.correction).collect()
    }

    /// Reads JSON Lines. Blank lines are skipped; any other unparseable line
    /// is reported with its 1-based line number.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut claims = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let claim: Claim = serde_json::from_str(&line).map_err(|e| DataError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            claims.push(claim);
        }
        Ok(Self { claims })
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        Self::read_jsonl(text.as_bytes())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for c in &self.claims {
            serde_json::to_writer(&mut w, c).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// SHA-256 of the JSON Lines encoding, hex.
    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_jsonl())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
