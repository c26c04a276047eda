use std::borrow::Cow;

use super::kernels::{self, gemm, LayerNormCache, View};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Activate(NodeId, Activation),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        cache: LayerNormCache,
    },
    GatherRows {
        table: NodeId,
        idx: Vec<usize>,
    },
    ConcatCols(Vec<NodeId>),
    MulCol(NodeId, NodeId),
    SegmentSum {
        x: NodeId,
        block: usize,
    },
    ShiftRows {
        x: NodeId,
        offset: isize,
        block: usize,
    },
    BlockScores {
        q: NodeId,
        k: NodeId,
        block: usize,
    },
    BlockMix {
        a: NodeId,
        v: NodeId,
        block: usize,
    },
    Sum(NodeId),
    WeightedBce {
        p: NodeId,
        targets: Vec<f64>,
        weights: Vec<f64>,
        total_weight: f64,
    },
}

struct Node<'a> {
    op: Op,
    value: Cow<'a, Tensor>,
    needs_grad: bool,
}

/// Lower clamp applied to probabilities inside the weighted cross entropy.
pub const PROB_CLAMP: f64 = 1e-7;

/// Wengert list of primitive operations. Values are computed eagerly when an
/// operation is recorded; [`Tape::backward`] replays the list in reverse.
///
/// Parameters are borrowed for the lifetime of the tape so a forward pass
/// never copies weight matrices.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Cow<'a, Tensor>, needs_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Trainable leaf borrowed from the caller.
    pub fn param(&mut self, t: &'a Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Cow::Borrowed(t),
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf owned by the tape.
    pub fn var(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Cow::Owned(t),
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Input leaf; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Cow::Owned(t),
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        self.push(Op::MatMul(a, b), Cow::Owned(out), ng, "matmul")
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).transpose();
        let ng = self.needs(&[a]);
        self.push(Op::Transpose(a), Cow::Owned(out), ng, "transpose")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(TensorError::Shape {
                op: "add",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::from_raw(x.rows(), x.cols(), data);
        let ng = self.needs(&[a, b]);
        self.push(Op::Add(a, b), Cow::Owned(out), ng, "add")
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if y.shape() != [1, x.cols()] {
            return Err(TensorError::Shape {
                op: "add_row",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let bias = y.data();
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(x.cols()) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        let out = Tensor::from_raw(x.rows(), x.cols(), data);
        let ng = self.needs(&[a, b]);
        self.push(Op::AddRow(a, b), Cow::Owned(out), ng, "add_row")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(TensorError::Shape {
                op: "mul",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_raw(x.rows(), x.cols(), data);
        let ng = self.needs(&[a, b]);
        self.push(Op::Mul(a, b), Cow::Owned(out), ng, "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let x = self.value(a);
        let out = Tensor::from_raw(x.rows(), x.cols(), x.data().iter().map(|v| v * c).collect());
        let ng = self.needs(&[a]);
        self.push(Op::Scale(a, c), Cow::Owned(out), ng, "scale")
    }

    pub fn activate(&mut self, a: NodeId, kind: Activation) -> Result<NodeId> {
        let x = self.value(a);
        let data = match kind {
            Activation::Relu => x.data().iter().map(|v| v.max(0.0)).collect(),
            Activation::Sigmoid => x.data().iter().map(|&v| kernels::sigmoid(v)).collect(),
        };
        let out = Tensor::from_raw(x.rows(), x.cols(), data);
        let ng = self.needs(&[a]);
        self.push(Op::Activate(a, kind), Cow::Owned(out), ng, "activate")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.activate(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let out = kernels::softmax_rows(self.value(a));
        let ng = self.needs(&[a]);
        self.push(Op::SoftmaxRows(a), Cow::Owned(out), ng, "softmax_rows")
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        if g.shape() != [1, xv.cols()] || b.shape() != [1, xv.cols()] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                left: xv.shape(),
                right: g.shape(),
            });
        }
        if eps <= 0.0 {
            return Err(TensorError::Contract {
                op: "layer_norm",
                reason: format!("eps must be positive, got {eps}"),
            });
        }
        let (out, cache) = kernels::layer_norm_forward(xv, g.data(), b.data(), eps);
        let ng = self.needs(&[x, gain, bias]);
        self.push(
            Op::LayerNorm { x, gain, bias, cache },
            Cow::Owned(out),
            ng,
            "layer_norm",
        )
    }

    /// Row lookup: output row `t` is row `idx[t]` of `table`.
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        if idx.is_empty() {
            return Err(TensorError::Contract {
                op: "gather_rows",
                reason: "empty index list".into(),
            });
        }
        let d = tv.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for (position, &i) in idx.iter().enumerate() {
            if i >= tv.rows() {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    position,
                    index: i,
                    bound: tv.rows(),
                });
            }
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::from_raw(idx.len(), d, data);
        let ng = self.needs(&[table]);
        self.push(
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            Cow::Owned(out),
            ng,
            "gather_rows",
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| TensorError::Contract {
            op: "concat_cols",
            reason: "no inputs".into(),
        })?;
        let rows = self.shape(*first)[0];
        for p in parts {
            if self.shape(*p)[0] != rows {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    left: self.shape(*first),
                    right: self.shape(*p),
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::from_raw(rows, cols, data);
        let ng = self.needs(parts);
        self.push(Op::ConcatCols(parts.to_vec()), Cow::Owned(out), ng, "concat_cols")
    }

    /// Scales row `i` of `x` by `col[i]`, where `col` is `rows × 1`.
    pub fn mul_col(&mut self, x: NodeId, col: NodeId) -> Result<NodeId> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.shape() != [xv.rows(), 1] {
            return Err(TensorError::Shape {
                op: "mul_col",
                left: xv.shape(),
                right: cv.shape(),
            });
        }
        let mut data = xv.data().to_vec();
        for (row, s) in data.chunks_exact_mut(xv.cols()).zip(cv.data()) {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        let out = Tensor::from_raw(xv.rows(), xv.cols(), data);
        let ng = self.needs(&[x, col]);
        self.push(Op::MulCol(x, col), Cow::Owned(out), ng, "mul_col")
    }

    fn check_block(&self, op: &'static str, x: NodeId, block: usize) -> Result<()> {
        let rows = self.shape(x)[0];
        if block == 0 || rows % block != 0 {
            return Err(TensorError::Contract {
                op,
                reason: format!("{rows} rows are not a whole number of blocks of {block}"),
            });
        }
        Ok(())
    }

    /// Sums each consecutive block of `block` rows: `(B·T) × d -> B × d`.
    pub fn segment_sum(&mut self, x: NodeId, block: usize) -> Result<NodeId> {
        self.check_block("segment_sum", x, block)?;
        let xv = self.value(x);
        let d = xv.cols();
        let segments = xv.rows() / block;
        let mut data = vec![0.0; segments * d];
        for (r, row) in xv.data().chunks_exact(d).enumerate() {
            let dst = &mut data[(r / block) * d..(r / block + 1) * d];
            for (o, v) in dst.iter_mut().zip(row) {
                *o += v;
            }
        }
        let out = Tensor::from_raw(segments, d, data);
        let ng = self.needs(&[x]);
        self.push(Op::SegmentSum { x, block }, Cow::Owned(out), ng, "segment_sum")
    }

    /// Within each block, output row `i` is input row `i + offset`, or zeros
    /// when that falls outside the block.
    pub fn shift_rows(&mut self, x: NodeId, offset: isize, block: usize) -> Result<NodeId> {
        self.check_block("shift_rows", x, block)?;
        let xv = self.value(x);
        let d = xv.cols();
        let mut data = vec![0.0; xv.len()];
        for r in 0..xv.rows() {
            let base = (r / block) * block;
            let src = (r - base) as isize + offset;
            if src >= 0 && (src as usize) < block {
                data[r * d..(r + 1) * d].copy_from_slice(xv.row(base + src as usize));
            }
        }
        let out = Tensor::from_raw(xv.rows(), d, data);
        let ng = self.needs(&[x]);
        self.push(Op::ShiftRows { x, offset, block }, Cow::Owned(out), ng, "shift_rows")
    }

    /// Per block `b`: `S_b = Q_b K_bᵀ`, stacked into a `(B·T) × T` matrix.
    pub fn block_scores(&mut self, q: NodeId, k: NodeId, block: usize) -> Result<NodeId> {
        self.check_block("block_scores", q, block)?;
        let (qv, kv) = (self.value(q), self.value(k));
        if qv.shape() != kv.shape() {
            return Err(TensorError::Shape {
                op: "block_scores",
                left: qv.shape(),
                right: kv.shape(),
            });
        }
        let d = qv.cols();
        let mut data = vec![0.0; qv.rows() * block];
        for b in 0..qv.rows() / block {
            let span = b * block * d..(b + 1) * block * d;
            gemm(
                View::of(&qv.data()[span.clone()], block, d),
                View::of(&kv.data()[span], block, d).t(),
                &mut data[b * block * block..(b + 1) * block * block],
                false,
            );
        }
        let out = Tensor::from_raw(qv.rows(), block, data);
        let ng = self.needs(&[q, k]);
        self.push(Op::BlockScores { q, k, block }, Cow::Owned(out), ng, "block_scores")
    }

    /// Per block `b`: `O_b = A_b V_b` with `A` stacked `(B·T) × T`.
    pub fn block_mix(&mut self, a: NodeId, v: NodeId, block: usize) -> Result<NodeId> {
        self.check_block("block_mix", v, block)?;
        let (av, vv) = (self.value(a), self.value(v));
        if av.shape() != [vv.rows(), block] {
            return Err(TensorError::Shape {
                op: "block_mix",
                left: av.shape(),
                right: vv.shape(),
            });
        }
        let d = vv.cols();
        let mut data = vec![0.0; vv.len()];
        for b in 0..vv.rows() / block {
            gemm(
                View::of(&av.data()[b * block * block..(b + 1) * block * block], block, block),
                View::of(&vv.data()[b * block * d..(b + 1) * block * d], block, d),
                &mut data[b * block * d..(b + 1) * block * d],
                false,
            );
        }
        let out = Tensor::from_raw(vv.rows(), d, data);
        let ng = self.needs(&[a, v]);
        self.push(Op::BlockMix { a, v, block }, Cow::Owned(out), ng, "block_mix")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(&[a]);
        self.push(Op::Sum(a), Cow::Owned(Tensor::from_raw(1, 1, vec![s])), ng, "sum")
    }

    /// Weight-normalized binary cross entropy of an `n × 1` probability column:
    /// `Σ wᵢ·ℓᵢ / Σ wᵢ` with probabilities clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
    pub fn weighted_bce(&mut self, p: NodeId, targets: &[f64], weights: &[f64]) -> Result<NodeId> {
        let pv = self.value(p);
        let n = pv.rows();
        if pv.cols() != 1 || targets.len() != n || weights.len() != n {
            return Err(TensorError::Shape {
                op: "weighted_bce",
                left: pv.shape(),
                right: [targets.len(), weights.len()],
            });
        }
        let total_weight: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || total_weight <= 0.0 {
            return Err(TensorError::Contract {
                op: "weighted_bce",
                reason: "weights must be nonnegative with a positive sum".into(),
            });
        }
        let loss = pv
            .data()
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&p, &y), &w)| w * bce(p, y))
            .sum::<f64>()
            / total_weight;
        let ng = self.needs(&[p]);
        self.push(
            Op::WeightedBce {
                p,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                total_weight,
            },
            Cow::Owned(Tensor::from_raw(1, 1, vec![loss])),
            ng,
            "weighted_bce",
        )
    }

    /// Reverse sweep from a scalar `loss`. Gradient accumulators are cleared
    /// first, so calling this twice gives the same result.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(TensorError::NotScalar { shape });
        }
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor) {
        let node = &self.nodes[i];
        let out = &*node.value;
        let mut updates: Vec<(NodeId, Tensor)> = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let gv = View::of(g.data(), g.rows(), g.cols());
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; av.len()];
                    gemm(gv, View::of(bv.data(), bv.rows(), bv.cols()).t(), &mut da, false);
                    updates.push((*a, Tensor::from_raw(av.rows(), av.cols(), da)));
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; bv.len()];
                    gemm(View::of(av.data(), av.rows(), av.cols()).t(), gv, &mut db, false);
                    updates.push((*b, Tensor::from_raw(bv.rows(), bv.cols(), db)));
                }
            }
            Op::Transpose(a) => updates.push((*a, g.transpose())),
            Op::Add(a, b) => {
                updates.push((*a, g.clone()));
                updates.push((*b, g.clone()));
            }
            Op::AddRow(a, b) => {
                updates.push((*a, g.clone()));
                let mut db = vec![0.0; g.cols()];
                for row in g.data().chunks_exact(g.cols()) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                updates.push((*b, Tensor::from_raw(1, g.cols(), db)));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                updates.push((*a, Tensor::from_raw(g.rows(), g.cols(), da)));
                updates.push((*b, Tensor::from_raw(g.rows(), g.cols(), db)));
            }
            Op::Scale(a, c) => {
                let da = g.data().iter().map(|v| v * c).collect();
                updates.push((*a, Tensor::from_raw(g.rows(), g.cols(), da)));
            }
            Op::Activate(a, kind) => {
                let da = match kind {
                    Activation::Relu => g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                        .collect(),
                    Activation::Sigmoid => g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(gv, y)| gv * y * (1.0 - y))
                        .collect(),
                };
                updates.push((*a, Tensor::from_raw(g.rows(), g.cols(), da)));
            }
            Op::SoftmaxRows(a) => {
                let cols = out.cols();
                let mut da = vec![0.0; out.len()];
                for ((dst, y), gy) in da
                    .chunks_exact_mut(cols)
                    .zip(out.data().chunks_exact(cols))
                    .zip(g.data().chunks_exact(cols))
                {
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for c in 0..cols {
                        dst[c] = y[c] * (gy[c] - dot);
                    }
                }
                updates.push((*a, Tensor::from_raw(out.rows(), cols, da)));
            }
            Op::LayerNorm { x, gain, bias, cache } => {
                let d = out.cols();
                let gain_v = self.value(*gain).data();
                let mut dx = vec![0.0; out.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..out.rows() {
                    let gy = &g.data()[r * d..(r + 1) * d];
                    let xh = &cache.normalized[r * d..(r + 1) * d];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xh = 0.0;
                    for c in 0..d {
                        dgain[c] += gy[c] * xh[c];
                        dbias[c] += gy[c];
                        dxhat[c] = gy[c] * gain_v[c];
                        sum_dxhat += dxhat[c];
                        sum_dxhat_xh += dxhat[c] * xh[c];
                    }
                    let inv = cache.inv_std[r];
                    let n = d as f64;
                    for c in 0..d {
                        dx[r * d + c] = inv / n * (n * dxhat[c] - sum_dxhat - xh[c] * sum_dxhat_xh);
                    }
                }
                updates.push((*x, Tensor::from_raw(out.rows(), d, dx)));
                updates.push((*gain, Tensor::from_raw(1, d, dgain)));
                updates.push((*bias, Tensor::from_raw(1, d, dbias)));
            }
            Op::GatherRows { table, idx } => {
                if self.nodes[table.0].needs_grad {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let mut dt = vec![0.0; tv.len()];
                    for (t, &row) in idx.iter().enumerate() {
                        let dst = &mut dt[row * d..(row + 1) * d];
                        for (o, v) in dst.iter_mut().zip(g.row(t)) {
                            *o += v;
                        }
                    }
                    updates.push((*table, Tensor::from_raw(tv.rows(), d, dt)));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if self.nodes[p.0].needs_grad {
                        let mut dp = Vec::with_capacity(g.rows() * w);
                        for r in 0..g.rows() {
                            dp.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        updates.push((*p, Tensor::from_raw(g.rows(), w, dp)));
                    }
                    offset += w;
                }
            }
            Op::MulCol(x, col) => {
                let (xv, cv) = (self.value(*x), self.value(*col));
                let d = xv.cols();
                let mut dx = g.data().to_vec();
                for (row, s) in dx.chunks_exact_mut(d).zip(cv.data()) {
                    for v in row.iter_mut() {
                        *v *= s;
                    }
                }
                let dc = g
                    .data()
                    .chunks_exact(d)
                    .zip(xv.data().chunks_exact(d))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(p, q)| p * q).sum())
                    .collect();
                updates.push((*x, Tensor::from_raw(xv.rows(), d, dx)));
                updates.push((*col, Tensor::from_raw(xv.rows(), 1, dc)));
            }
            Op::SegmentSum { x, block } => {
                let rows = self.shape(*x)[0];
                let d = g.cols();
                let mut dx = Vec::with_capacity(rows * d);
                for r in 0..rows {
                    dx.extend_from_slice(g.row(r / block));
                }
                updates.push((*x, Tensor::from_raw(rows, d, dx)));
            }
            Op::ShiftRows { x, offset, block } => {
                let d = g.cols();
                let mut dx = vec![0.0; g.len()];
                for r in 0..g.rows() {
                    let base = (r / block) * block;
                    let src = (r - base) as isize + offset;
                    if src >= 0 && (src as usize) < *block {
                        let s = base + src as usize;
                        for c in 0..d {
                            dx[s * d + c] += g.data()[r * d + c];
                        }
                    }
                }
                updates.push((*x, Tensor::from_raw(g.rows(), d, dx)));
            }
            Op::BlockScores { q, k, block } => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let d = qv.cols();
                let t = *block;
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                for b in 0..qv.rows() / t {
                    let span = b * t * d..(b + 1) * t * d;
                    let gb = View::of(&g.data()[b * t * t..(b + 1) * t * t], t, t);
                    gemm(gb, View::of(&kv.data()[span.clone()], t, d), &mut dq[span.clone()], false);
                    gemm(gb.t(), View::of(&qv.data()[span.clone()], t, d), &mut dk[span], false);
                }
                updates.push((*q, Tensor::from_raw(qv.rows(), d, dq)));
                updates.push((*k, Tensor::from_raw(kv.rows(), d, dk)));
            }
            Op::BlockMix { a, v, block } => {
                let (av, vv) = (self.value(*a), self.value(*v));
                let d = vv.cols();
                let t = *block;
                let mut da = vec![0.0; av.len()];
                let mut dv = vec![0.0; vv.len()];
                for b in 0..vv.rows() / t {
                    let vspan = b * t * d..(b + 1) * t * d;
                    let aspan = b * t * t..(b + 1) * t * t;
                    let gb = View::of(&g.data()[vspan.clone()], t, d);
                    gemm(gb, View::of(&vv.data()[vspan.clone()], t, d).t(), &mut da[aspan.clone()], false);
                    gemm(View::of(&av.data()[aspan], t, t).t(), gb, &mut dv[vspan], false);
                }
                updates.push((*a, Tensor::from_raw(av.rows(), t, da)));
                updates.push((*v, Tensor::from_raw(vv.rows(), d, dv)));
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                updates.push((*a, Tensor::filled(r, c, g.data()[0])));
            }
            Op::WeightedBce {
                p,
                targets,
                weights,
                total_weight,
            } => {
                let pv = self.value(*p);
                let scale = g.data()[0] / total_weight;
                let dp = pv
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&p, &y), &w)| scale * w * bce_grad(p, y))
                    .collect();
                updates.push((*p, Tensor::from_raw(pv.rows(), 1, dp)));
            }
        }
        for (id, t) in updates {
            self.accumulate(id, t);
        }
    }

    /// Gradient from the last [`Tape::backward`], if the node received one.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros of its shape when the loss does not depend on it.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor {
        match self.grad(id) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shape(id);
                Tensor::zeros(r, c)
            }
        }
    }

    /// Like [`Tape::grad_or_zeros`] but moves the gradient out of the tape.
    pub fn take_grad(&mut self, id: NodeId) -> Tensor {
        match self.grads.get_mut(id.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let [r, c] = self.shape(id);
                Tensor::zeros(r, c)
            }
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub(crate) fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn bce_grad(p: f64, y: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}
