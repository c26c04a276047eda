//! The four comparable claim classifiers.
//!
//! | encoder          | row features                       | aggregation    |
//! |------------------|------------------------------------|----------------|
//! | `BOW`            | summed one-hots and amounts        | sum (implicit) |
//! | `CNN`            | embedding + 1-D convolution        | sigmoid pool   |
//! | `PFF`            | embedding + row-wise affine/relu   | sigmoid pool   |
//! | `SELF_ATTENTION` | embedding + self-attention block   | sigmoid pool   |
//!
//! All variants finish with the same feed-forward head.

mod persist;

pub use persist::{ModelManifest, ParamEntry, MANIFEST_FILE, WEIGHTS_FILE};

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Claim, DataError, EncodedClaim, PreprocessStats, NUM_FACTORS};
use crate::layers::{
    bow_width, AttentionBlock, BowRows, Conv1d, Dropout, Embedding, MlpHead, ParamStore,
    PiecewiseFeedForward, SigmoidPool,
};
use crate::tensor::{NodeId, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "BOW")]
    Bow,
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "PFF")]
    Pff,
    #[serde(rename = "SELF_ATTENTION")]
    SelfAttention,
}

impl EncoderKind {
    pub fn short_name(self) -> &'static str {
        match self {
            EncoderKind::Bow => "BOW",
            EncoderKind::Cnn => "CNN",
            EncoderKind::Pff => "PFF",
            EncoderKind::SelfAttention => "SelfA",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Label used in reports; defaults to the encoder's short name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub encoder: EncoderKind,
    /// Feature width ("Dim FE"). Ignored by `BOW`.
    #[serde(default)]
    pub d_model: usize,
    /// Hidden width of the head ("Dim FC").
    pub fc_width: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_code_vocab")]
    pub code_vocab: usize,
    #[serde(default = "default_kernel_width")]
    pub kernel_width: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_code_vocab() -> usize {
    4000
}

fn default_kernel_width() -> usize {
    3
}

impl ModelConfig {
    pub fn new(encoder: EncoderKind, d_model: usize, fc_width: usize) -> Self {
        Self {
            name: None,
            encoder,
            d_model,
            fc_width,
            dropout: 0.0,
            weight_decay: 0.0,
            code_vocab: default_code_vocab(),
            kernel_width: default_kernel_width(),
            seed: 0,
        }
    }

    /// Hyperparameters selected for the production data set.
    pub fn reference(encoder: EncoderKind) -> Self {
        let (d, fc, dropout, wd) = match encoder {
            EncoderKind::Cnn => (64, 512, 0.0, 1e-7),
            EncoderKind::Bow => (0, 1024, 0.1, 1e-5),
            EncoderKind::Pff => (32, 512, 0.0, 1e-6),
            EncoderKind::SelfAttention => (128, 512, 0.0, 1e-5),
        };
        Self {
            dropout,
            weight_decay: wd,
            ..Self::new(encoder, d, fc)
        }
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.encoder.short_name().to_string())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.encoder != EncoderKind::Bow && self.d_model == 0 {
            return err("d_model must be positive".into());
        }
        if self.d_model > 4096 || self.fc_width > 1 << 16 {
            return err("dimensions are unreasonably large".into());
        }
        if self.fc_width == 0 {
            return err("fc_width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return err(format!("weight_decay {} must be nonnegative", self.weight_decay));
        }
        if self.code_vocab < 2 || self.code_vocab > 1 << 22 {
            return err(format!("code_vocab {} outside 2..=2^22", self.code_vocab));
        }
        if self.kernel_width % 2 == 0 || self.kernel_width > 31 {
            return err(format!("kernel_width {} must be odd and at most 31", self.kernel_width));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
enum Extractor {
    Conv(Conv1d),
    Pff(PiecewiseFeedForward),
    Attention(AttentionBlock),
}

#[derive(Debug, Clone)]
struct Layers {
    embed: Option<Embedding>,
    extractor: Option<Extractor>,
    pool: Option<SigmoidPool>,
    head: MlpHead,
}

/// `B` claims of `rows_per_claim` rows each, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RowBatch {
    pub rows_per_claim: usize,
    pub codes: Vec<usize>,
    pub factors: Vec<usize>,
    pub amounts: Vec<f64>,
}

impl RowBatch {
    pub fn new<'a, I>(claims: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a EncodedClaim>,
    {
        let mut batch = Self {
            rows_per_claim: 0,
            codes: Vec::new(),
            factors: Vec::new(),
            amounts: Vec::new(),
        };
        for c in claims {
            if c.is_empty() {
                return Err(ModelError::Input("claim has no rows".into()));
            }
            if batch.rows_per_claim == 0 {
                batch.rows_per_claim = c.len();
            } else if batch.rows_per_claim != c.len() {
                return Err(ModelError::Input(format!(
                    "batch mixes claims of {} and {} rows",
                    batch.rows_per_claim,
                    c.len()
                )));
            }
            batch.codes.extend_from_slice(&c.codes);
            batch.factors.extend_from_slice(&c.factors);
            batch.amounts.extend_from_slice(&c.amounts);
        }
        if batch.rows_per_claim == 0 {
            return Err(ModelError::Input("empty batch".into()));
        }
        Ok(batch)
    }

    pub fn num_claims(&self) -> usize {
        self.codes.len() / self.rows_per_claim
    }
}

/// Nodes produced by one forward pass.
pub struct ForwardOutput {
    /// `B × 1` fraud probabilities.
    pub probs: NodeId,
    /// `(B·T) × 1` sigmoid pooling gates; absent for `BOW`.
    pub pool_weights: Option<NodeId>,
    /// `(B·T) × T` self-attention weights; `SELF_ATTENTION` only.
    pub attention: Option<NodeId>,
}

/// Interpretability view of one claim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionReport {
    pub probability: f64,
    /// `T × T`, rows sum to one.
    pub self_attention: Option<Tensor>,
    pub pool_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub preprocess: PreprocessStats,
    pub meta: TrainingMeta,
    layers: Layers,
}

const PREDICT_BATCH: usize = 256;

impl Model {
    /// Builds and initializes a model. The same config always yields
    /// bit-identical parameters.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let layers = match config.encoder {
            EncoderKind::Bow => Layers {
                embed: None,
                extractor: None,
                pool: None,
                head: MlpHead::new(&mut store, &mut rng, bow_width(config.code_vocab), config.fc_width),
            },
            kind => {
                let embed = Embedding::new(&mut store, &mut rng, config.code_vocab, d);
                let extractor = match kind {
                    EncoderKind::Cnn => Extractor::Conv(Conv1d::new(&mut store, &mut rng, d, config.kernel_width)),
                    EncoderKind::Pff => Extractor::Pff(PiecewiseFeedForward::new(&mut store, &mut rng, d)),
                    _ => Extractor::Attention(AttentionBlock::new(&mut store, &mut rng, d)),
                };
                let pool = SigmoidPool::new(&mut store, &mut rng, d);
                let head = MlpHead::new(&mut store, &mut rng, d, config.fc_width);
                Layers {
                    embed: Some(embed),
                    extractor: Some(extractor),
                    pool: Some(pool),
                    head,
                }
            }
        };
        Ok(Self {
            config,
            params: store,
            preprocess: PreprocessStats::default(),
            meta: TrainingMeta::default(),
            layers,
        })
    }

    pub fn encoder(&self) -> EncoderKind {
        self.config.encoder
    }

    /// Width of the head's input.
    pub fn head_input_width(&self) -> usize {
        self.params.get(self.layers.head.w1).rows()
    }

    pub fn encode(&self, claim: &Claim) -> Result<EncodedClaim> {
        if claim.rows.is_empty() {
            return Err(ModelError::Input(format!("claim {:?} has no rows", claim.id)));
        }
        Ok(EncodedClaim::encode(claim, &self.preprocess, self.config.code_vocab)?)
    }

    /// Records the forward pass of `batch`. `dropout_rng` switches the head
    /// to training mode.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        p: &[NodeId],
        batch: &RowBatch,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        if batch.factors.iter().any(|f| *f >= NUM_FACTORS) {
            return Err(ModelError::Input("factor id out of range".into()));
        }
        let t = batch.rows_per_claim;
        let l = &self.layers;
        let dropout = dropout_rng.map(|rng| Dropout {
            rate: self.config.dropout,
            rng,
        });
        let (pre, pool_weights, attention) = match (&l.embed, &l.extractor, &l.pool) {
            (Some(embed), Some(extractor), Some(pool)) => {
                let x = embed.forward(tape, p, &batch.codes, &batch.factors, &batch.amounts)?;
                let (h, attention) = match extractor {
                    Extractor::Conv(c) => (c.forward(tape, p, x, t)?, None),
                    Extractor::Pff(f) => (f.forward(tape, p, x)?, None),
                    Extractor::Attention(a) => {
                        let out = a.forward(tape, p, x, t)?;
                        (out.features, Some(out.attention))
                    }
                };
                let pooled = pool.forward(tape, p, h, t)?;
                let pre = l.head.first_layer(tape, p, pooled.pooled)?;
                (pre, Some(pooled.weights), attention)
            }
            _ => {
                let rows = BowRows {
                    codes: &batch.codes,
                    factors: &batch.factors,
                    amounts: &batch.amounts,
                };
                let pre = l.head.first_layer_bow(tape, p, self.config.code_vocab, &rows, t)?;
                (pre, None, None)
            }
        };
        let probs = l.head.finish(tape, p, pre, dropout)?;
        Ok(ForwardOutput {
            probs,
            pool_weights,
            attention,
        })
    }

    /// Eval-mode probabilities for equal-length encoded claims.
    pub fn predict_batch(&self, batch: &RowBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &p, batch, None)?;
        Ok(tape.value(out.probs).data().to_vec())
    }

    /// Eval-mode probability of fraud for one claim.
    pub fn predict(&self, claim: &Claim) -> Result<f64> {
        let enc = self.encode(claim)?;
        Ok(self.predict_batch(&RowBatch::new([&enc])?)?[0])
    }

    /// Scores many claims, batching equal lengths together. The result is in
    /// input order and identical to scoring one claim at a time up to
    /// floating-point summation order inside matrix products.
    pub fn predict_encoded(&self, claims: &[EncodedClaim]) -> Result<Vec<f64>> {
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, c) in claims.iter().enumerate() {
            by_len.entry(c.len()).or_default().push(i);
        }
        let mut out = vec![0.0; claims.len()];
        for idx in by_len.values() {
            for chunk in idx.chunks(PREDICT_BATCH) {
                let batch = RowBatch::new(chunk.iter().map(|&i| &claims[i]))?;
                for (&i, p) in chunk.iter().zip(self.predict_batch(&batch)?) {
                    out[i] = p;
                }
            }
        }
        Ok(out)
    }

    pub fn predict_many(&self, claims: &[Claim]) -> Result<Vec<f64>> {
        let enc = claims.iter().map(|c| self.encode(c)).collect::<Result<Vec<_>>>()?;
        self.predict_encoded(&enc)
    }

    /// Probability, self-attention matrix (self-attention encoder only) and
    /// per-row pooling gates (all encoders except `BOW`) for one claim.
    pub fn extract_attention(&self, claim: &Claim) -> Result<AttentionReport> {
        let enc = self.encode(claim)?;
        let batch = RowBatch::new([&enc])?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &p, &batch, None)?;
        Ok(AttentionReport {
            probability: tape.value(out.probs).data()[0],
            self_attention: out.attention.map(|a| tape.value(a).clone()),
            pool_weights: out.pool_weights.map(|w| tape.value(w).data().to_vec()),
        })
    }
}
