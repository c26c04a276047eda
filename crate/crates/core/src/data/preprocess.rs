use serde::{Deserialize, Serialize};

use super::{Claim, DataError, Dataset, Result};

/// Log-amount range fit on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub log_min: f64,
    pub log_max: f64,
}

impl PreprocessStats {
    pub fn new(log_min: f64, log_max: f64) -> Result<Self> {
        if !(log_min < log_max) || !log_min.is_finite() || !log_max.is_finite() {
            return Err(DataError::Config(format!(
                "need finite log_min < log_max, got {log_min} and {log_max}"
            )));
        }
        Ok(Self { log_min, log_max })
    }

    /// `(ln amount − log_min) / (log_max − log_min)`, clipped to `[0, 1]`.
    pub fn apply(&self, amount: f64) -> Result<f64> {
        if !(amount > 0.0) || !amount.is_finite() {
            return Err(DataError::Input(format!("amount must be positive, got {amount}")));
        }
        let scaled = (amount.ln() - self.log_min) / (self.log_max - self.log_min);
        Ok(scaled.clamp(0.0, 1.0))
    }
}

impl Default for PreprocessStats {
    /// Amounts between 1 and 10⁴ currency units. Placeholder until fit.
    fn default() -> Self {
        Self {
            log_min: 0.0,
            log_max: 1e4f64.ln(),
        }
    }
}

pub fn fit_preprocess(train: &Dataset) -> Result<PreprocessStats> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in train.claims.iter().flat_map(|c| &c.rows) {
        let l = row.amount.ln();
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if lo.is_infinite() {
        return Err(DataError::Input("cannot fit preprocessing on an empty dataset".into()));
    }
    PreprocessStats::new(lo, hi).map_err(|_| {
        DataError::Input("all training amounts are identical; cannot fit a log range".into())
    })
}

/// Model-ready row arrays for one claim.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedClaim {
    pub codes: Vec<usize>,
    pub factors: Vec<usize>,
    pub amounts: Vec<f64>,
}

impl EncodedClaim {
    /// Codes outside `1..code_vocab` map to the reserved unknown index 0.
    pub fn encode(claim: &Claim, stats: &PreprocessStats, code_vocab: usize) -> Result<Self> {
        if claim.rows.is_empty() {
            return Err(DataError::Input(format!("claim {:?} has no rows", claim.id)));
        }
        let mut out = Self {
            codes: Vec::with_capacity(claim.len()),
            factors: Vec::with_capacity(claim.len()),
            amounts: Vec::with_capacity(claim.len()),
        };
        for r in &claim.rows {
            let code = r.code_id as usize;
            out.codes.push(if code < code_vocab { code } else { 0 });
            out.factors.push(usize::from(r.factor_id));
            out.amounts.push(stats.apply(r.amount)?);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}
