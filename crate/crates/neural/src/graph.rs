//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] records every operation of one forward pass. Node values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and
//! returns gradients for every parameter that took part in the pass.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{NeuralError, Result};
use crate::params::{GradientSet, ParamId, ParameterStore};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Row-major `rows x cols` table of allowed positions for a masked softmax.
pub type Mask = Arc<Vec<bool>>;

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    Gather { table: NodeId, ids: Vec<usize> },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    Transpose(NodeId),
    SliceCols { src: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    SelectRows { src: NodeId, rows: Vec<usize> },
    Softmax(NodeId),
    LayerNorm { src: NodeId, inv_std: Vec<f64> },
    Gelu(NodeId),
    Nll { probs: NodeId, targets: Vec<usize>, weights: Vec<f64>, normalizer: f64 },
    BceWithLogits { logits: NodeId, labels: Vec<f64>, normalizer: f64 },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn shape_err(op: &'static str, detail: String) -> NeuralError {
    NeuralError::Shape { op, detail }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Leaf node for a stored parameter. Repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(store.get(id).value.clone(), Op::Param);
        self.param_nodes.insert(id, node);
        node
    }

    pub fn param_named(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        Ok(self.param(store, store.id(name)?))
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(shape_err("gather", format!("row {bad} of {} rows", t.rows())));
        }
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Elementwise product of same-shaped nodes.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        for (x, y) in out.data_mut().iter_mut().zip(vb.data()) {
            *x *= y;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds the `1 x m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (x, y) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *x += y;
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    /// Multiplies every row of `a` elementwise by the `1 x m` row `b`.
    pub fn mul_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(shape_err("mul_row", format!("{:?} * {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (x, y) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *x *= y;
            }
        }
        Ok(self.push(out, Op::MulRow(a, b)))
    }

    /// Scales row `r` of `a` by `c[r]`, where `c` is `n x 1`.
    pub fn mul_col(&mut self, a: NodeId, c: NodeId) -> Result<NodeId> {
        let (va, vc) = (self.value(a), self.value(c));
        if vc.cols() != 1 || vc.rows() != va.rows() {
            return Err(shape_err("mul_col", format!("{:?} * {:?}", va.shape(), vc.shape())));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            let s = vc.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        Ok(self.push(out, Op::MulCol(a, c)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut out = self.value(a).clone();
        out.scale_in_place(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        gemm(va, false, vb, false, &mut out, 1.0, 0.0);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(shape_err("matmul_nt", format!("{:?} x {:?}^T", va.shape(), vb.shape())));
        }
        let mut out = Tensor::zeros(va.rows(), vb.rows());
        gemm(va, false, vb, true, &mut out, 1.0, 0.0);
        Ok(self.push(out, Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start > end || end > va.cols() {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {} cols", va.cols())));
        }
        let width = end - start;
        let mut out = Tensor::zeros(va.rows(), width);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols { src: a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs".into()));
        };
        let rows = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let v = self.value(p);
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
                offset += v.cols();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn select_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let va = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= va.rows()) {
            return Err(shape_err("select_rows", format!("row {bad} of {}", va.rows())));
        }
        let mut out = Tensor::zeros(rows.len(), va.cols());
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(va.row(r));
        }
        Ok(self.push(out, Op::SelectRows { src: a, rows: rows.to_vec() }))
    }

    /// Row-wise softmax. Entries where `mask` is false get probability
    /// exactly 0; a row with no allowed entry is all zeros.
    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<&Mask>) -> Result<NodeId> {
        let va = self.value(a);
        if let Some(m) = mask {
            if m.len() != va.len() {
                return Err(shape_err("softmax_rows", format!("mask of {} for {:?}", m.len(), va.shape())));
            }
        }
        let cols = va.cols();
        let mut out = Tensor::zeros(va.rows(), cols);
        for r in 0..va.rows() {
            let allowed = |c: usize| mask.map_or(true, |m| m[r * cols + c]);
            let row = va.row(r);
            let max = (0..cols)
                .filter(|&c| allowed(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let orow = out.row_mut(r);
            let mut sum = 0.0;
            for c in 0..cols {
                if allowed(c) {
                    let e = (row[c] - max).exp();
                    orow[c] = e;
                    sum += e;
                }
            }
            orow.iter_mut().for_each(|x| *x /= sum);
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Row-wise normalization to zero mean and unit variance, without an
    /// affine transform.
    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let cols = va.cols() as f64;
        let mut out = Tensor::zeros(va.rows(), va.cols());
        let mut inv_std = Vec::with_capacity(va.rows());
        for r in 0..va.rows() {
            let row = va.row(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, x) in out.row_mut(r).iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm { src: a, inv_std })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| {
            let u = GELU_C * (*x + GELU_A * *x * *x * *x);
            *x = 0.5 * *x * (1.0 + u.tanh());
        });
        self.push(out, Op::Gelu(a))
    }

    /// `-sum_r weights[r] * ln(probs[r, targets[r]]) / normalizer`.
    pub fn nll(&mut self, probs: NodeId, targets: &[usize], weights: &[f64], normalizer: f64) -> Result<NodeId> {
        let vp = self.value(probs);
        if targets.len() != vp.rows() || weights.len() != vp.rows() {
            return Err(shape_err("nll", format!("{} targets for {:?}", targets.len(), vp.shape())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vp.cols()) {
            return Err(shape_err("nll", format!("target {bad} of {} classes", vp.cols())));
        }
        let total: f64 = targets
            .iter()
            .zip(weights)
            .enumerate()
            .filter(|(_, (_, &w))| w != 0.0)
            .map(|(r, (&t, &w))| -w * vp.get(r, t).ln())
            .sum();
        let loss = if normalizer == 0.0 { 0.0 } else { total / normalizer };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                normalizer,
            },
        ))
    }

    /// Binary cross-entropy of `n x 1` logits against labels in {0, 1},
    /// summed and divided by `normalizer`.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[f64], normalizer: f64) -> Result<NodeId> {
        let vz = self.value(logits);
        if vz.cols() != 1 || vz.rows() != labels.len() {
            return Err(shape_err("bce_with_logits", format!("{:?} vs {} labels", vz.shape(), labels.len())));
        }
        let total: f64 = vz
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = if normalizer == 0.0 { 0.0 } else { total / normalizer };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
                normalizer,
            },
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward_nodes(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NeuralError::NoForward);
        }
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(NeuralError::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Gradients of `loss` for every parameter used in this graph.
    pub fn backward(&self, loss: NodeId) -> Result<GradientSet> {
        let mut grads = self.backward_nodes(loss)?;
        let mut entries: Vec<(ParamId, Tensor)> = self
            .param_nodes
            .iter()
            .map(|(&pid, &node)| {
                let [r, c] = self.value(node).shape();
                (pid, grads[node.0].take().unwrap_or_else(|| Tensor::zeros(r, c)))
            })
            .collect();
        entries.sort_by_key(|(pid, _)| *pid);
        Ok(GradientSet::new(entries))
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Constant | Op::Param => {}
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let mut gt = Tensor::zeros(t.rows(), t.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (x, y) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                accumulate(grads, *table, gt);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = g.clone();
                let mut gb = g.clone();
                for ((x, y), (&p, &q)) in ga
                    .data_mut()
                    .iter_mut()
                    .zip(gb.data_mut().iter_mut())
                    .zip(va.data().iter().zip(vb.data()))
                {
                    *x *= q;
                    *y *= p;
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (x, y) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                accumulate(grads, *b, gb);
            }
            Op::MulRow(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = g.clone();
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        ga.set(r, c, g.get(r, c) * vb.get(0, c));
                        gb.data_mut()[c] += g.get(r, c) * va.get(r, c);
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::MulCol(a, c) => {
                let (va, vc) = (self.value(*a), self.value(*c));
                let mut ga = g.clone();
                let mut gc = Tensor::zeros(vc.rows(), 1);
                for r in 0..g.rows() {
                    let s = vc.get(r, 0);
                    let mut dot = 0.0;
                    for (k, x) in ga.row_mut(r).iter_mut().enumerate() {
                        dot += *x * va.get(r, k);
                        *x *= s;
                    }
                    gc.set(r, 0, dot);
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *c, gc);
            }
            Op::Scale(a, c) => {
                let mut ga = g.clone();
                ga.scale_in_place(*c);
                accumulate(grads, *a, ga);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                gemm(g, false, vb, true, &mut ga, 1.0, 0.0);
                let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                gemm(va, true, g, false, &mut gb, 1.0, 0.0);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                gemm(g, false, vb, false, &mut ga, 1.0, 0.0);
                let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                gemm(g, true, va, false, &mut gb, 1.0, 0.0);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::SliceCols { src, start } => {
                let vs = self.value(*src);
                let mut gs = Tensor::zeros(vs.rows(), vs.cols());
                for r in 0..g.rows() {
                    gs.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *src, gs);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let mut gp = Tensor::zeros(vp.rows(), vp.cols());
                    for r in 0..vp.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + vp.cols()]);
                    }
                    offset += vp.cols();
                    accumulate(grads, p, gp);
                }
            }
            Op::SelectRows { src, rows } => {
                let vs = self.value(*src);
                let mut gs = Tensor::zeros(vs.rows(), vs.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for (x, y) in gs.row_mut(r).iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
                accumulate(grads, *src, gs);
            }
            Op::Softmax(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((x, p), q) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *x = p * (q - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::LayerNorm { src, inv_std } => {
                let cols = out.cols() as f64;
                let mut gs = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let mean_g = gr.iter().sum::<f64>() / cols;
                    let mean_gy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / cols;
                    for ((x, gi), yi) in gs.row_mut(r).iter_mut().zip(gr).zip(y) {
                        *x = inv_std[r] * (gi - mean_g - yi * mean_gy);
                    }
                }
                accumulate(grads, *src, gs);
            }
            Op::Gelu(a) => {
                let va = self.value(*a);
                let mut ga = g.clone();
                for (gx, &x) in ga.data_mut().iter_mut().zip(va.data()) {
                    let u = GELU_C * (x + GELU_A * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    *gx *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                }
                accumulate(grads, *a, ga);
            }
            Op::Nll {
                probs,
                targets,
                weights,
                normalizer,
            } => {
                if *normalizer == 0.0 {
                    return;
                }
                let vp = self.value(*probs);
                let scale = g.item() / normalizer;
                let mut gp = Tensor::zeros(vp.rows(), vp.cols());
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w != 0.0 {
                        gp.set(r, t, -w * scale / vp.get(r, t));
                    }
                }
                accumulate(grads, *probs, gp);
            }
            Op::BceWithLogits {
                logits,
                labels,
                normalizer,
            } => {
                if *normalizer == 0.0 {
                    return;
                }
                let vz = self.value(*logits);
                let scale = g.item() / normalizer;
                let data = vz
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                    .collect();
                accumulate(grads, *logits, Tensor::from_vec(vz.rows(), 1, data).expect("shape"));
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, Tensor::filled(va.rows(), va.cols(), g.item()));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::numeric_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        Tensor::random_normal(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Checks d(loss)/d(input) for a unary graph builder against central
    /// differences on the input.
    fn check_unary(input: Tensor, build: impl Fn(&mut Graph, NodeId) -> NodeId) {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let loss = build(&mut g, x);
        let grads = g.backward_nodes(loss).unwrap();
        let analytic = grads[x.0].clone().unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));
        let numeric = numeric_gradient(&input, 1e-5, |t| {
            let mut g = Graph::new();
            let x = g.constant(t.clone());
            let loss = build(&mut g, x);
            g.value(loss).item()
        });
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < 1e-6, "analytic {a} numeric {n}");
        }
    }

    // A fixed random projection turns any node into a scalar with
    // non-trivial upstream gradients.
    fn project(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
        let v = g.value(x).clone();
        let w = g.constant(rand_tensor(v.rows(), v.cols(), seed));
        let y = g.mul(x, w).unwrap();
        g.sum(y)
    }

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let mut store = ParameterStore::new(0);
        let id = store.insert_normal("w", 3, 4, 1.0).unwrap();
        store.insert_normal("unused", 2, 2, 1.0).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).unwrap(), &Tensor::filled(3, 4, 1.0));
        assert!(grads.get(store.id("unused").unwrap()).is_none());
    }

    #[test]
    fn backward_on_empty_graph_fails() {
        let g = Graph::new();
        assert!(matches!(g.backward(NodeId(0)), Err(NeuralError::NoForward)));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(NeuralError::NonScalarLoss { .. })));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_respect_mask() {
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(3, 5, 1));
        let mask: Mask = Arc::new((0..15).map(|i| i % 5 != 2).collect());
        let y = g.softmax_rows(x, Some(&mask)).unwrap();
        for r in 0..3 {
            let row = g.value(y).row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(row[2], 0.0);
        }
    }

    #[test]
    fn layer_norm_moments() {
        let mut g = Graph::new();
        let mut t = rand_tensor(4, 16, 2);
        t.scale_in_place(3.0);
        let x = g.constant(t);
        let y = g.layer_norm(x);
        for r in 0..4 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        check_unary(rand_tensor(3, 4, 10), |g, x| project(g, x, 11));
        check_unary(rand_tensor(3, 4, 12), |g, x| {
            let y = g.softmax_rows(x, None).unwrap();
            project(g, y, 13)
        });
        check_unary(rand_tensor(3, 4, 14), |g, x| {
            let mask: Mask = Arc::new((0..12).map(|i| i % 3 != 0).collect());
            let y = g.softmax_rows(x, Some(&mask)).unwrap();
            project(g, y, 15)
        });
        check_unary(rand_tensor(3, 6, 16), |g, x| {
            let y = g.layer_norm(x);
            project(g, y, 17)
        });
        check_unary(rand_tensor(3, 4, 18), |g, x| {
            let y = g.gelu(x);
            project(g, y, 19)
        });
        check_unary(rand_tensor(3, 4, 20), |g, x| {
            let w = g.constant(rand_tensor(4, 5, 21));
            let y = g.matmul(x, w).unwrap();
            project(g, y, 22)
        });
        check_unary(rand_tensor(4, 3, 23), |g, x| {
            let w = g.constant(rand_tensor(5, 4, 24));
            let y = g.matmul(w, x).unwrap();
            project(g, y, 25)
        });
        check_unary(rand_tensor(3, 4, 26), |g, x| {
            let w = g.constant(rand_tensor(5, 4, 27));
            let y = g.matmul_nt(x, w).unwrap();
            let z = g.matmul_nt(w, x).unwrap();
            let s = g.transpose(z);
            let t = g.add(y, s).unwrap();
            project(g, t, 28)
        });
        check_unary(rand_tensor(1, 4, 29), |g, b| {
            let a = g.constant(rand_tensor(3, 4, 30));
            let y = g.add_row(a, b).unwrap();
            let z = g.mul_row(y, b).unwrap();
            project(g, z, 31)
        });
        check_unary(rand_tensor(5, 3, 32), |g, x| {
            let y = g.select_rows(x, &[4, 0, 4]).unwrap();
            let z = g.gather(x, &[1, 1, 2]).unwrap();
            let w = g.add(y, z).unwrap();
            let s = g.scale(w, 0.7);
            project(g, s, 33)
        });
        check_unary(rand_tensor(3, 4, 34), |g, x| {
            let p = g.softmax_rows(x, None).unwrap();
            g.nll(p, &[0, 3, 1], &[1.0, 0.5, 1.0], 2.5).unwrap()
        });
        check_unary(rand_tensor(4, 1, 35), |g, z| g.bce_with_logits(z, &[1.0, 0.0, 0.0, 1.0], 4.0).unwrap());
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(2, 1));
        let l = g.bce_with_logits(z, &[1.0, 0.0], 2.0).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
