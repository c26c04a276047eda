//! Cost-weighted training: sample weights from correction amounts and the
//! clerk cost, Adam with coupled L2 decay, length-homogeneous batches and
//! early stopping on the weighted validation loss.

mod adam;
mod search;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use search::{random_search, SearchResult, SearchSpace, Trial};

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batch_by_length, fit_preprocess, Claim, DataError, Dataset, EncodedClaim};
use crate::metrics::profit_report;
use crate::models::{Model, ModelError, RowBatch};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    /// Overrides the model config's weight decay when set.
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    /// Cost of one manual review, in currency units.
    #[serde(default = "defaults::clerk_cost")]
    pub clerk_cost: f64,
    #[serde(default = "defaults::threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        1e-4
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn max_epochs() -> usize {
        50
    }
    pub fn patience() -> usize {
        5
    }
    pub fn clerk_cost() -> f64 {
        20.0
    }
    pub fn threshold() -> f64 {
        0.5
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            weight_decay: None,
            batch_size: defaults::batch_size(),
            max_epochs: defaults::max_epochs(),
            patience: defaults::patience(),
            clerk_cost: defaults::clerk_cost(),
            threshold: defaults::threshold(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if let Some(wd) = self.weight_decay {
            if !(wd >= 0.0) || !wd.is_finite() {
                return err(format!("weight_decay must be nonnegative, got {wd}"));
            }
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        if self.patience == 0 {
            return err("patience must be at least 1".into());
        }
        if !(self.clerk_cost > 0.0) || !self.clerk_cost.is_finite() {
            return err(format!("clerk_cost must be positive, got {}", self.clerk_cost));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return err(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// `None` when the validation split has no positive potential.
    pub val_profit: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the lowest validation loss.
    pub best_epoch: Option<usize>,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_profit";

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let profit = e.val_profit.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, profit);
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|i| &self.epochs[i])
    }
}

/// Raw-cost weight of a claim divided by `normalizer`: the correction amount
/// for positives and the clerk cost for negatives.
pub fn sample_weight(claim: &Claim, clerk_cost: f64, normalizer: f64) -> f64 {
    assert!(normalizer > 0.0, "normalizer must be positive");
    let raw = if claim.label == 1 { claim.correction } else { clerk_cost };
    raw / normalizer
}

/// Mean raw weight over `train`, so normalized training weights average one.
pub fn weight_normalizer(train: &Dataset, clerk_cost: f64) -> f64 {
    let total: f64 = train.claims.iter().map(|c| sample_weight(c, clerk_cost, 1.0)).sum();
    total / train.len().max(1) as f64
}

/// `w · (−y ln p − (1 − y) ln(1 − p))` with `p` clamped to `[1e-7, 1 − 1e-7]`.
pub fn weighted_bce(p: f64, y: f64, w: f64) -> f64 {
    w * crate::tensor::tape_bce(p, y)
}

struct Prepared {
    encoded: Vec<EncodedClaim>,
    labels: Vec<u8>,
    targets: Vec<f64>,
    weights: Vec<f64>,
    corrections: Vec<f64>,
}

fn prepare(model: &Model, ds: &Dataset, clerk_cost: f64, normalizer: f64) -> Result<Prepared> {
    let encoded = ds
        .claims
        .iter()
        .map(|c| model.encode(c))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Prepared {
        encoded,
        labels: ds.labels(),
        targets: ds.claims.iter().map(|c| f64::from(c.label)).collect(),
        weights: ds.claims.iter().map(|c| sample_weight(c, clerk_cost, normalizer)).collect(),
        corrections: ds.corrections(),
    })
}

/// Weighted validation loss `Σ wᵢ ℓᵢ / Σ wᵢ` of already computed scores.
pub fn weighted_loss(scores: &[f64], targets: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    scores
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((&p, &y), &w)| weighted_bce(p, y, w))
        .sum::<f64>()
        / total
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1)
}

/// Trains `model` on `train`, early-stopping on the weighted loss over `val`.
///
/// Preprocessing statistics are fit on `train` and stored in the model. The
/// returned model carries the parameters of the best validation epoch.
pub fn fit(mut model: Model, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config("train and validation splits must be nonempty".into()));
    }
    model.preprocess = fit_preprocess(train)?;
    let normalizer = weight_normalizer(train, cfg.clerk_cost);
    let tr = prepare(&model, train, cfg.clerk_cost, normalizer)?;
    let va = prepare(&model, val, cfg.clerk_cost, normalizer)?;
    let lengths: Vec<usize> = tr.encoded.iter().map(EncodedClaim::len).collect();

    let adam = AdamConfig::new(
        cfg.learning_rate,
        cfg.weight_decay.unwrap_or(model.config.weight_decay),
    );
    let mut state = AdamState::new(model.params.tensors());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        let seed = epoch_seed(cfg.seed, epoch);
        let batches = batch_by_length(&lengths, cfg.batch_size, seed);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD50F);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);

        for (bi, idx) in batches.iter().enumerate() {
            let diverged = |reason: String| TrainError::Diverged {
                epoch,
                batch: bi,
                reason,
            };
            let batch = RowBatch::new(idx.iter().map(|&i| &tr.encoded[i]))?;
            let targets: Vec<f64> = idx.iter().map(|&i| tr.targets[i]).collect();
            let weights: Vec<f64> = idx.iter().map(|&i| tr.weights[i]).collect();
            let grads = {
                let mut tape = Tape::new();
                let p = model.params.bind(&mut tape);
                let out = model
                    .forward(&mut tape, &p, &batch, Some(&mut dropout_rng))
                    .map_err(|e| match e {
                        ModelError::Tensor(t) => diverged(t.to_string()),
                        other => TrainError::Model(other),
                    })?;
                let loss = tape
                    .weighted_bce(out.probs, &targets, &weights)
                    .map_err(|e: TensorError| diverged(e.to_string()))?;
                let value = tape.value(loss).data()[0];
                tape.backward(loss).map_err(|e| diverged(e.to_string()))?;
                let w: f64 = weights.iter().sum();
                loss_sum += value * w;
                weight_sum += w;
                p.iter().map(|id| tape.take_grad(*id)).collect::<Vec<_>>()
            };
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(diverged("non-finite gradient".into()));
            }
            adam_step(model.params.tensors_mut(), &grads, &mut state, &adam);
            if model.params.tensors().iter().any(|t| !t.is_finite()) {
                return Err(diverged("non-finite parameter after update".into()));
            }
        }

        let scores = model.predict_encoded(&va.encoded)?;
        let val_loss = weighted_loss(&scores, &va.targets, &va.weights);
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                batch: batches.len(),
                reason: "non-finite validation loss".into(),
            });
        }
        let val_profit = profit_report(&scores, &va.labels, &va.corrections, cfg.clerk_cost, cfg.threshold)
            .ok()
            .map(|r| r.profit);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / weight_sum,
            val_loss,
            val_profit,
        });

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params.tensors().to_vec()));
            history.best_epoch = Some(history.epochs.len() - 1);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    model.meta.epochs_run = history.epochs.len();
    if let Some((loss, params)) = best {
        for (dst, src) in model.params.tensors_mut().iter_mut().zip(params) {
            *dst = src;
        }
        model.meta.best_val_loss = Some(loss);
        model.meta.best_epoch = history.best_epoch;
    }
    Ok((model, history))
}

/// Scores `ds` and reports ranking and Profit metrics.
pub fn evaluate(model: &Model, ds: &Dataset, clerk_cost: f64, threshold: f64) -> Result<crate::metrics::EvalReport> {
    let scores = model.predict_many(&ds.claims)?;
    profit_report(&scores, &ds.labels(), &ds.corrections(), clerk_cost, threshold)
        .map_err(|e| TrainError::Config(e.to_string()))
}
