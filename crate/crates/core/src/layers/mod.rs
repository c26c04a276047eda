//! Building blocks: row embedding, per-row feature extractors (piecewise
//! feed-forward, self-attention block, convolution baseline), sigmoid-gated
//! sum pooling, the feed-forward head and the bag-of-words encoding.
//!
//! Positions are rows. A batch of `B` claims that all have `T` rows is laid
//! out as one `(B·T) × d` matrix; attention, convolution and pooling work per
//! block of `T` consecutive rows, so claims in a batch never interact.

mod params;

pub use params::{glorot, ParamId, ParamStore};

use rand::Rng;

use crate::data::NUM_FACTORS;
use crate::tensor::{NodeId, Result, Tape, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const FACTOR_DIM: usize = 4;

/// Code embedding width for a model width of `d_model`.
pub fn code_dim(d_model: usize) -> usize {
    (d_model / 2).max(1)
}

/// Row embedding: `[code_embed ‖ factor_embed ‖ scaled_amount] · W + b`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub code_table: ParamId,
    pub factor_table: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, code_vocab: usize, d_model: usize) -> Self {
        let dc = code_dim(d_model);
        let d_in = dc + FACTOR_DIM + 1;
        Self {
            code_table: store.add("embed.code_table", glorot(rng, code_vocab, dc)),
            factor_table: store.add("embed.factor_table", glorot(rng, NUM_FACTORS, FACTOR_DIM)),
            proj_w: store.add("embed.proj_w", glorot(rng, d_in, d_model)),
            proj_b: store.add("embed.proj_b", Tensor::zeros(1, d_model)),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        p: &[NodeId],
        codes: &[usize],
        factors: &[usize],
        amounts: &[f64],
    ) -> Result<NodeId> {
        let c = tape.gather_rows(p[self.code_table.0], codes)?;
        let f = tape.gather_rows(p[self.factor_table.0], factors)?;
        let a = tape.constant(Tensor::column(amounts));
        let cat = tape.concat_cols(&[c, f, a])?;
        let x = tape.matmul(cat, p[self.proj_w.0])?;
        tape.add_row(x, p[self.proj_b.0])
    }
}

/// Row-wise `relu(X W + b)`.
#[derive(Debug, Clone)]
pub struct PiecewiseFeedForward {
    pub w: ParamId,
    pub b: ParamId,
}

impl PiecewiseFeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, d_model: usize) -> Self {
        Self {
            w: store.add("pff.w", glorot(rng, d_model, d_model)),
            b: store.add("pff.b", Tensor::zeros(1, d_model)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = tape.matmul(x, p[self.w.0])?;
        let h = tape.add_row(h, p[self.b.0])?;
        tape.relu(h)
    }
}

/// Single-head, single-layer scaled dot-product self-attention with residual
/// connections, layer normalization and a position-wise feed-forward layer.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub d_model: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

pub struct AttentionOutput {
    /// Final features, `(B·T) × d`.
    pub features: NodeId,
    /// Row-stochastic attention weights, `(B·T) × T`.
    pub attention: NodeId,
}

impl AttentionBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, d_model: usize) -> Self {
        let d = d_model;
        Self {
            d_model,
            wq: store.add("attn.wq", glorot(rng, d, d)),
            bq: store.add("attn.bq", Tensor::zeros(1, d)),
            wk: store.add("attn.wk", glorot(rng, d, d)),
            bk: store.add("attn.bk", Tensor::zeros(1, d)),
            wv: store.add("attn.wv", glorot(rng, d, d)),
            bv: store.add("attn.bv", Tensor::zeros(1, d)),
            ln1_gain: store.add("attn.ln1_gain", Tensor::filled(1, d, 1.0)),
            ln1_bias: store.add("attn.ln1_bias", Tensor::zeros(1, d)),
            ffn_w1: store.add("attn.ffn_w1", glorot(rng, d, 2 * d)),
            ffn_b1: store.add("attn.ffn_b1", Tensor::zeros(1, 2 * d)),
            ffn_w2: store.add("attn.ffn_w2", glorot(rng, 2 * d, d)),
            ffn_b2: store.add("attn.ffn_b2", Tensor::zeros(1, d)),
            ln2_gain: store.add("attn.ln2_gain", Tensor::filled(1, d, 1.0)),
            ln2_bias: store.add("attn.ln2_bias", Tensor::zeros(1, d)),
        }
    }

    fn affine(tape: &mut Tape<'_>, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &[NodeId], x: NodeId, block: usize) -> Result<AttentionOutput> {
        let q = Self::affine(tape, x, p[self.wq.0], p[self.bq.0])?;
        let k = Self::affine(tape, x, p[self.wk.0], p[self.bk.0])?;
        let v = Self::affine(tape, x, p[self.wv.0], p[self.bv.0])?;
        let scores = tape.block_scores(q, k, block)?;
        let scores = tape.scale(scores, 1.0 / (self.d_model as f64).sqrt())?;
        let attention = tape.softmax_rows(scores)?;
        let h1 = tape.block_mix(attention, v, block)?;
        let r1 = tape.add(h1, x)?;
        let h2 = tape.layer_norm(r1, p[self.ln1_gain.0], p[self.ln1_bias.0], LAYER_NORM_EPS)?;
        let f = Self::affine(tape, h2, p[self.ffn_w1.0], p[self.ffn_b1.0])?;
        let f = tape.relu(f)?;
        let h3 = Self::affine(tape, f, p[self.ffn_w2.0], p[self.ffn_b2.0])?;
        let r2 = tape.add(h3, h2)?;
        let features = tape.layer_norm(r2, p[self.ln2_gain.0], p[self.ln2_bias.0], LAYER_NORM_EPS)?;
        Ok(AttentionOutput { features, attention })
    }
}

/// One-dimensional convolution over positions with zero padding, followed by
/// relu. The kernel is stored as `(width·d) × d`; slice `j` multiplies the
/// row at offset `j − width/2`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub width: usize,
    pub kernel: ParamId,
    pub b: ParamId,
}

impl Conv1d {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, d_model: usize, width: usize) -> Self {
        assert!(width % 2 == 1, "kernel width must be odd");
        Self {
            width,
            kernel: store.add("conv.kernel", glorot(rng, width * d_model, d_model)),
            b: store.add("conv.b", Tensor::zeros(1, d_model)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &[NodeId], x: NodeId, block: usize) -> Result<NodeId> {
        let half = (self.width / 2) as isize;
        let mut taps = Vec::with_capacity(self.width);
        for offset in -half..=half {
            taps.push(if offset == 0 { x } else { tape.shift_rows(x, offset, block)? });
        }
        let stacked = tape.concat_cols(&taps)?;
        let h = tape.matmul(stacked, p[self.kernel.0])?;
        let h = tape.add_row(h, p[self.b.0])?;
        tape.relu(h)
    }
}

/// Sum pooling gated by a per-position sigmoid score. The gates do not sum to
/// one, so the pooled vector grows with the number of rows.
#[derive(Debug, Clone)]
pub struct SigmoidPool {
    pub w: ParamId,
    pub b: ParamId,
}

pub struct PoolOutput {
    /// `B × d`.
    pub pooled: NodeId,
    /// `(B·T) × 1`, each in (0, 1).
    pub weights: NodeId,
}

impl SigmoidPool {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, d_model: usize) -> Self {
        Self {
            w: store.add("pool.w", glorot(rng, d_model, 1)),
            b: store.add("pool.b", Tensor::zeros(1, 1)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &[NodeId], h: NodeId, block: usize) -> Result<PoolOutput> {
        let s = tape.matmul(h, p[self.w.0])?;
        let s = tape.add_row(s, p[self.b.0])?;
        let weights = tape.sigmoid(s)?;
        let gated = tape.mul_col(h, weights)?;
        let pooled = tape.segment_sum(gated, block)?;
        Ok(PoolOutput { pooled, weights })
    }
}

/// One relu hidden layer of width `fc_width` and a sigmoid output.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Inverted dropout: kept units are scaled by `1 / (1 − rate)`.
pub struct Dropout<'r, R: Rng> {
    pub rate: f64,
    pub rng: &'r mut R,
}

impl MlpHead {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, d_in: usize, fc_width: usize) -> Self {
        Self {
            w1: store.add("head.w1", glorot(rng, d_in, fc_width)),
            b1: store.add("head.b1", Tensor::zeros(1, fc_width)),
            w2: store.add("head.w2", glorot(rng, fc_width, 1)),
            b2: store.add("head.b2", Tensor::zeros(1, 1)),
        }
    }

    /// Hidden pre-activation `h W1 + b1` for dense inputs.
    pub fn first_layer(&self, tape: &mut Tape<'_>, p: &[NodeId], h: NodeId) -> Result<NodeId> {
        let z = tape.matmul(h, p[self.w1.0])?;
        tape.add_row(z, p[self.b1.0])
    }

    /// Hidden pre-activation for bag-of-words inputs without materializing the
    /// count vector: multiplying a sum of one-hots by `W1` is the sum of the
    /// selected rows of `W1`.
    pub fn first_layer_bow(
        &self,
        tape: &mut Tape<'_>,
        p: &[NodeId],
        code_vocab: usize,
        rows: &BowRows<'_>,
        block: usize,
    ) -> Result<NodeId> {
        let w1 = p[self.w1.0];
        let code_rows = tape.gather_rows(w1, rows.codes)?;
        let factor_idx: Vec<usize> = rows.factors.iter().map(|f| code_vocab + f).collect();
        let factor_rows = tape.gather_rows(w1, &factor_idx)?;
        let amount_idx = vec![code_vocab + NUM_FACTORS; rows.codes.len()];
        let amount_rows = tape.gather_rows(w1, &amount_idx)?;
        let amounts = tape.constant(Tensor::column(rows.amounts));
        let amount_rows = tape.mul_col(amount_rows, amounts)?;
        let per_row = tape.add(code_rows, factor_rows)?;
        let per_row = tape.add(per_row, amount_rows)?;
        let z = tape.segment_sum(per_row, block)?;
        tape.add_row(z, p[self.b1.0])
    }

    /// Finishes the head from the hidden pre-activation: relu, optional
    /// dropout, output layer and sigmoid. Returns `B × 1` probabilities.
    pub fn finish<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        p: &[NodeId],
        pre: NodeId,
        dropout: Option<Dropout<'_, R>>,
    ) -> Result<NodeId> {
        let mut hidden = tape.relu(pre)?;
        if let Some(Dropout { rate, rng }) = dropout {
            if rate > 0.0 {
                let [r, c] = tape.value(hidden).shape();
                let keep = 1.0 - rate;
                let mask = (0..r * c)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = tape.constant(Tensor::new(r, c, mask)?);
                hidden = tape.mul(hidden, mask)?;
            }
        }
        let z = tape.matmul(hidden, p[self.w2.0])?;
        let z = tape.add_row(z, p[self.b2.0])?;
        tape.sigmoid(z)
    }

    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        p: &[NodeId],
        h: NodeId,
        dropout: Option<Dropout<'_, R>>,
    ) -> Result<NodeId> {
        let pre = self.first_layer(tape, p, h)?;
        self.finish(tape, p, pre, dropout)
    }
}

/// Row arrays of a batch, borrowed for the bag-of-words route.
pub struct BowRows<'a> {
    pub codes: &'a [usize],
    pub factors: &'a [usize],
    pub amounts: &'a [f64],
}

/// Width of the bag-of-words vector for a code vocabulary of `code_vocab`.
pub fn bow_width(code_vocab: usize) -> usize {
    code_vocab + NUM_FACTORS + 1
}

/// `[code counts (code_vocab) ‖ factor counts (6) ‖ Σ scaled amounts]`.
/// Codes outside the vocabulary count toward the unknown slot 0.
pub fn bow_encode(code_vocab: usize, codes: &[usize], factors: &[usize], amounts: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; bow_width(code_vocab)];
    for &c in codes {
        v[if c < code_vocab { c } else { 0 }] += 1.0;
    }
    for &f in factors {
        v[code_vocab + f.min(NUM_FACTORS - 1)] += 1.0;
    }
    // summed in sorted order so the result does not depend on row order
    let mut sorted = amounts.to_vec();
    sorted.sort_by(f64::total_cmp);
    v[code_vocab + NUM_FACTORS] = sorted.iter().sum();
    v
}
