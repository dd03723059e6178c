//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation eagerly (the forward value is computed
//! on insertion) and [`Graph::backward`] walks the tape once in reverse.
//! Nodes that do not depend on a trainable leaf are skipped.

use super::params::{ParamId, ParamStore};
use super::{conv1d, conv_transpose1d, gelu, gelu_grad, normalize_row_in_place, sigmoid, softmax_prefix_in_place, Real, Tensor};
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<F> {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    AddCol(NodeId, NodeId),
    Gelu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LeakyRelu(NodeId, F),
    Ln(NodeId),
    Softmax(NodeId),
    Normalize { a: NodeId, rstd: Vec<F> },
    Gather { table: NodeId, ids: Vec<usize> },
    SliceCols { a: NodeId, start: usize },
    SliceRows { a: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    Transpose(NodeId),
    Conv1d { x: NodeId, w: NodeId, k: usize, stride: usize, pad: usize },
    ConvT1d { x: NodeId, w: NodeId, k: usize, stride: usize },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, mask: Vec<bool>, probs: Tensor<F>, count: usize },
    MeanAbsDiff(NodeId, NodeId),
    MeanSquaredDiff(NodeId, NodeId),
    Mean(NodeId),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    param: Option<(u64, ParamId)>,
}

/// Recording of one forward computation.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    param_nodes: HashMap<(u64, usize, bool), NodeId>,
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    nodes: Vec<Option<Tensor<F>>>,
    params: HashMap<(u64, usize), Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of a node, `None` if the node did not influence the loss.
    pub fn node(&self, n: NodeId) -> Option<&Tensor<F>> {
        self.nodes[n.0].as_ref()
    }

    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(&(store.uid(), id.0))
    }

    /// Dense gradients aligned with `store`, zeros for untouched parameters.
    pub fn dense_for(&self, store: &ParamStore<F>) -> Vec<Tensor<F>> {
        store
            .iter()
            .map(|(id, _, t)| {
                self.params.get(&(store.uid(), id.0)).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|n| self.nodes[n.0].requires_grad)
    }

    pub fn value(&self, n: NodeId) -> &Tensor<F> {
        &self.nodes[n.0].value
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient but is not a parameter.
    pub fn input(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Trainable parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        self.param_leaf(store, id, true)
    }

    /// Parameter read as a constant (frozen module inside a trainable graph).
    pub fn frozen(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        self.param_leaf(store, id, false)
    }

    /// Looks a parameter up by name, trainable or frozen. Panics on unknown names.
    pub fn weight(&mut self, store: &ParamStore<F>, name: &str, trainable: bool) -> NodeId {
        let id = store.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param_leaf(store, id, trainable)
    }

    fn param_leaf(&mut self, store: &ParamStore<F>, id: ParamId, trainable: bool) -> NodeId {
        let key = (store.uid(), id.0, trainable);
        if let Some(&n) = self.param_nodes.get(&key) {
            return n;
        }
        let n = self.push(store.get(id).clone(), Op::Leaf, trainable);
        if trainable {
            self.nodes[n.0].param = Some((store.uid(), id));
        }
        self.param_nodes.insert(key, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    /// Broadcast-add a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.value(a).shape();
        assert_eq!(self.value(row).shape(), (1, c), "add_row expects a 1x{c} row");
        let rv = self.value(row).data().to_vec();
        let mut v = self.value(a).clone();
        for i in 0..r {
            for (x, &b) in v.row_mut(i).iter_mut().zip(&rv) {
                *x = *x + b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(v, Op::AddRow(a, row), rg)
    }

    /// Broadcast-multiply every row of `a` by a `1×c` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.value(a).shape();
        assert_eq!(self.value(row).shape(), (1, c), "mul_row expects a 1x{c} row");
        let rv = self.value(row).data().to_vec();
        let mut v = self.value(a).clone();
        for i in 0..r {
            for (x, &b) in v.row_mut(i).iter_mut().zip(&rv) {
                *x = *x * b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(v, Op::MulRow(a, row), rg)
    }

    /// Broadcast-add an `r×1` column to every column of `a` (per-channel bias).
    pub fn add_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (r, _) = self.value(a).shape();
        assert_eq!(self.value(col).shape(), (r, 1), "add_col expects a {r}x1 column");
        let cv = self.value(col).data().to_vec();
        let mut v = self.value(a).clone();
        for (i, &b) in cv.iter().enumerate() {
            for x in v.row_mut(i) {
                *x = *x + b;
            }
        }
        let rg = self.rg(&[a, col]);
        self.push(v, Op::AddCol(a, col), rg)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        let rg = self.rg(&[a]);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: F) -> NodeId {
        let v = self.value(a).map(|x| if x > F::zero() { x } else { x * slope });
        let rg = self.rg(&[a]);
        self.push(v, Op::LeakyRelu(a, slope), rg)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.ln());
        let rg = self.rg(&[a]);
        self.push(v, Op::Ln(a), rg)
    }

    /// Row-wise softmax. With `causal`, row `i` only sees columns
    /// `0..=i + (cols - rows)`; masked entries are exactly zero.
    pub fn softmax(&mut self, a: NodeId, causal: bool) -> NodeId {
        let mut v = self.value(a).clone();
        let (r, c) = v.shape();
        let offset = c.saturating_sub(r);
        for i in 0..r {
            let valid = if causal { (i + 1 + offset).min(c) } else { c };
            softmax_prefix_in_place(v.row_mut(i), valid);
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::Softmax(a), rg)
    }

    /// Zero-mean unit-variance normalization of each row (layer norm without affine).
    pub fn normalize_rows(&mut self, a: NodeId, eps: F) -> NodeId {
        let mut v = self.value(a).clone();
        let mut rstd = Vec::with_capacity(v.rows());
        for i in 0..v.rows() {
            let (_, s) = normalize_row_in_place(v.row_mut(i), eps);
            rstd.push(s);
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::Normalize { a, rstd }, rg)
    }

    /// Layer norm with learned gain and bias rows.
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId, eps: F) -> NodeId {
        let n = self.normalize_rows(a, eps);
        let g = self.mul_row(n, gain);
        self.add_row(g, bias)
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(id));
        }
        let rg = self.rg(&[table]);
        self.push(v, Op::Gather { table, ids: ids.to_vec() }, rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice_cols(start, len);
        let rg = self.rg(&[a]);
        self.push(v, Op::SliceCols { a, start }, rg)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice_rows(start, len);
        let rg = self.rg(&[a]);
        self.push(v, Op::SliceRows { a, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let rg = self.rg(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(v, Op::Transpose(a), rg)
    }

    /// See [`super::conv1d`] for layouts.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, k: usize, stride: usize, pad: usize) -> NodeId {
        let v = conv1d(self.value(x), self.value(w), k, stride, pad);
        let rg = self.rg(&[x, w]);
        self.push(v, Op::Conv1d { x, w, k, stride, pad }, rg)
    }

    /// See [`super::conv_transpose1d`] for layouts.
    pub fn conv_transpose1d(&mut self, x: NodeId, w: NodeId, k: usize, stride: usize) -> NodeId {
        let v = conv_transpose1d(self.value(x), self.value(w), k, stride);
        let rg = self.rg(&[x, w]);
        self.push(v, Op::ConvT1d { x, w, k, stride }, rg)
    }

    /// Mean next-token negative log-likelihood over rows whose `mask` is true.
    /// Panics if no row is selected.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], mask: &[bool]) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "cross_entropy target count");
        assert_eq!(mask.len(), targets.len(), "cross_entropy mask length");
        let count = mask.iter().filter(|&&m| m).count();
        assert!(count > 0, "cross_entropy with every position masked");
        let mut probs = lv.clone();
        let mut total = F::zero();
        for i in 0..probs.rows() {
            let row = probs.row_mut(i);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            if mask[i] {
                let logp = lv.get(i, targets[i]) - max - sum.ln();
                total = total - logp;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let loss = total / F::from_usize(count).unwrap();
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count },
            rg,
        )
    }

    /// Mean of `|a - b|` over all entries, as a 1x1 node.
    pub fn mean_abs_diff(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mean_abs_diff shape mismatch");
        let n = F::from_usize(va.len().max(1)).unwrap();
        let s: F = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::scalar(s / n), Op::MeanAbsDiff(a, b), rg)
    }

    /// Mean of `(a - b)²` over all entries.
    pub fn mean_squared_diff(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mean_squared_diff shape mismatch");
        let n = F::from_usize(va.len().max(1)).unwrap();
        let s: F = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::scalar(s / n), Op::MeanSquaredDiff(a, b), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mean();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(v), Op::Mean(a), rg)
    }

    /// Gradients of a 1x1 `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: NodeId) -> Gradients<F> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some((uid, pid)), Some(g)) = (node.param, grads[i].as_ref()) {
                params.insert((uid, pid.0), g.clone());
            }
        }
        Gradients { nodes: grads, params }
    }

    fn propagate(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[idx];
        let wants = |n: NodeId| self.nodes[n.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.matmul_t(self.value(*b)));
                }
                if wants(*b) {
                    accumulate(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                // out = a bᵀ ; da = g b ; db = gᵀ a
                if wants(*a) {
                    accumulate(grads, *a, g.matmul(self.value(*b)));
                }
                if wants(*b) {
                    accumulate(grads, *b, g.t_matmul(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if wants(*b) {
                    accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &x) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o = *o + x;
                        }
                    }
                    accumulate(grads, *row, gr);
                }
            }
            Op::MulRow(a, row) => {
                let rv = self.value(*row);
                if wants(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        for (x, &m) in ga.row_mut(i).iter_mut().zip(rv.data()) {
                            *x = *x * m;
                        }
                    }
                    accumulate(grads, *a, ga);
                }
                if wants(*row) {
                    let av = self.value(*a);
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for ((o, &x), &y) in gr.data_mut().iter_mut().zip(g.row(i)).zip(av.row(i)) {
                            *o = *o + x * y;
                        }
                    }
                    accumulate(grads, *row, gr);
                }
            }
            Op::AddCol(a, col) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if wants(*col) {
                    let gc = Tensor::from_fn(g.rows(), 1, |r, _| g.row(r).iter().copied().sum());
                    accumulate(grads, *col, gc);
                }
            }
            Op::Gelu(a) => {
                accumulate(grads, *a, g.zip_map(self.value(*a), |x, v| x * gelu_grad(v)));
            }
            Op::Tanh(a) => {
                accumulate(grads, *a, g.zip_map(&node.value, |x, y| x * (F::one() - y * y)));
            }
            Op::Sigmoid(a) => {
                accumulate(grads, *a, g.zip_map(&node.value, |x, y| x * y * (F::one() - y)));
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                accumulate(grads, *a, g.zip_map(self.value(*a), |x, v| if v > F::zero() { x } else { x * s }));
            }
            Op::Ln(a) => {
                accumulate(grads, *a, g.zip_map(self.value(*a), |x, v| x / v));
            }
            Op::Softmax(a) => {
                let p = &node.value;
                let mut ga = Tensor::zeros(p.rows(), p.cols());
                for i in 0..p.rows() {
                    let s: F = g.row(i).iter().zip(p.row(i)).map(|(&x, &y)| x * y).sum();
                    for ((o, &x), &y) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(p.row(i)) {
                        *o = y * (x - s);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Normalize { a, rstd } => {
                let y = &node.value;
                let n = F::from_usize(y.cols()).unwrap();
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let gy = g.row(i);
                    let yr = y.row(i);
                    let mean_g: F = gy.iter().copied().sum::<F>() / n;
                    let mean_gy: F = gy.iter().zip(yr).map(|(&a, &b)| a * b).sum::<F>() / n;
                    for ((o, &gv), &yv) in ga.row_mut(i).iter_mut().zip(gy).zip(yr) {
                        *o = rstd[i] * (gv - mean_g - yv * mean_gy);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let mut gt = Tensor::zeros(tv.rows(), tv.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, &x) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o = *o + x;
                    }
                }
                accumulate(grads, *table, gt);
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceRows { a, start } => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    ga.row_mut(start + r).copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if wants(p) {
                        accumulate(grads, p, g.slice_cols(off, w));
                    }
                    off += w;
                }
            }
            Op::Transpose(a) => {
                accumulate(grads, *a, g.transpose());
            }
            Op::Conv1d { x, w, k, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, stride, pad) = (*k, *stride, *pad);
                let c_in = xv.rows();
                let len = xv.cols();
                let mut gx = Tensor::zeros(c_in, len);
                let mut gw = Tensor::zeros(wv.rows(), wv.cols());
                for o in 0..wv.rows() {
                    let g_row = g.row(o);
                    for c in 0..c_in {
                        let x_row = xv.row(c);
                        for j in 0..k {
                            let wval = wv.get(o, c * k + j);
                            let mut acc_w = F::zero();
                            for (t, &gv) in g_row.iter().enumerate() {
                                let idx = (t * stride + j) as isize - pad as isize;
                                if idx >= 0 && (idx as usize) < len {
                                    let idx = idx as usize;
                                    acc_w = acc_w + gv * x_row[idx];
                                    let cur = gx.get(c, idx);
                                    gx.set(c, idx, cur + gv * wval);
                                }
                            }
                            let cur = gw.get(o, c * k + j);
                            gw.set(o, c * k + j, cur + acc_w);
                        }
                    }
                }
                if wants(*x) {
                    accumulate(grads, *x, gx);
                }
                if wants(*w) {
                    accumulate(grads, *w, gw);
                }
            }
            Op::ConvT1d { x, w, k, stride } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, stride) = (*k, *stride);
                let c_out = wv.cols() / k;
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                let mut gw = Tensor::zeros(wv.rows(), wv.cols());
                for c in 0..xv.rows() {
                    for o in 0..c_out {
                        let g_row = g.row(o);
                        for t in 0..xv.cols() {
                            let xval = xv.get(c, t);
                            let base = t * stride;
                            let mut acc_x = F::zero();
                            for j in 0..k {
                                let gv = g_row[base + j];
                                acc_x = acc_x + gv * wv.get(c, o * k + j);
                                let cur = gw.get(c, o * k + j);
                                gw.set(c, o * k + j, cur + gv * xval);
                            }
                            let cur = gx.get(c, t);
                            gx.set(c, t, cur + acc_x);
                        }
                    }
                }
                if wants(*x) {
                    accumulate(grads, *x, gx);
                }
                if wants(*w) {
                    accumulate(grads, *w, gw);
                }
            }
            Op::CrossEntropy { logits, targets, mask, probs, count } => {
                let scale = g.item() / F::from_usize(*count).unwrap();
                let mut gl = Tensor::zeros(probs.rows(), probs.cols());
                for i in 0..probs.rows() {
                    if !mask[i] {
                        continue;
                    }
                    for (o, &p) in gl.row_mut(i).iter_mut().zip(probs.row(i)) {
                        *o = p * scale;
                    }
                    let cur = gl.get(i, targets[i]);
                    gl.set(i, targets[i], cur - scale);
                }
                accumulate(grads, *logits, gl);
            }
            Op::MeanAbsDiff(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let s = g.item() / F::from_usize(va.len().max(1)).unwrap();
                let sign = va.zip_map(vb, |x, y| {
                    if x > y {
                        s
                    } else if x < y {
                        -s
                    } else {
                        F::zero()
                    }
                });
                if wants(*a) {
                    accumulate(grads, *a, sign.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, sign.map(|x| -x));
                }
            }
            Op::MeanSquaredDiff(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let s = g.item() * F::from_f64c(2.0) / F::from_usize(va.len().max(1)).unwrap();
                let d = va.zip_map(vb, |x, y| (x - y) * s);
                if wants(*a) {
                    accumulate(grads, *a, d.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, d.map(|x| -x));
                }
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let s = g.item() / F::from_usize(av.len().max(1)).unwrap();
                accumulate(grads, *a, Tensor::full(av.rows(), av.cols(), s));
            }
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Tensor<F>>], n: NodeId, g: Tensor<F>) {
    match &mut grads[n.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Graph<f64>, NodeId) -> NodeId, x0: Tensor<f64>) {
        let mut g = Graph::new();
        let x = g.input(x0.clone());
        let loss = build(&mut g, x);
        let grads = g.backward(loss);
        let analytic = grads.node(x).cloned().unwrap_or_else(|| Tensor::zeros(x0.rows(), x0.cols()));
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.input(xp);
                let l = build(&mut g, x);
                g.value(l).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((fd - a).abs() / 1f64.max(a.abs()).max(fd.abs()) < 1e-6, "coord {i}: fd {fd} analytic {a}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut s = seed;
        Tensor::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn matmul_and_softmax_grads() {
        let w = sample(4, 3, 1);
        fd_check(
            move |g, x| {
                let wn = g.constant(w.clone());
                let y = g.matmul(x, wn);
                let yt = g.transpose(y);
                let s = g.matmul_t(y, yt);
                let p = g.softmax(s, true);
                let t = g.constant(sample(3, 3, 9));
                g.mean_squared_diff(p, t)
            },
            sample(3, 4, 2),
        );
    }

    #[test]
    fn norm_gelu_ce_grads() {
        fd_check(
            |g, x| {
                let n = g.normalize_rows(x, 1e-5);
                let a = g.gelu(n);
                let b = g.tanh(a);
                g.cross_entropy(b, &[0, 2, 1], &[true, false, true])
            },
            sample(3, 5, 3),
        );
    }

    #[test]
    fn conv_grads() {
        let w = sample(3, 2 * 4, 4);
        let wt = sample(3, 2 * 3, 5);
        fd_check(
            move |g, x| {
                let wn = g.constant(w.clone());
                let y = g.conv1d(x, wn, 4, 2, 1);
                let y = g.leaky_relu(y, 0.2);
                let wtn = g.constant(wt.clone());
                let z = g.conv_transpose1d(y, wtn, 3, 3);
                let s = g.sigmoid(z);
                g.mean(s)
            },
            sample(2, 9, 6),
        );
    }

    #[test]
    fn gather_slice_concat_grads() {
        fd_check(
            |g, x| {
                let e = g.gather(x, &[2, 0, 2]);
                let a = g.slice_cols(e, 1, 2);
                let b = g.slice_rows(e, 0, 3);
                let b = g.slice_cols(b, 0, 1);
                let c = g.concat_cols(&[a, b]);
                let r = g.slice_rows(x, 0, 1);
                let r = g.slice_cols(r, 0, 3);
                let d = g.mul_row(c, r);
                let d = g.add_row(d, r);
                let col = g.slice_cols(e, 0, 1);
                let d = g.add_col(d, col);
                let t = g.constant(Tensor::full(3, 3, 0.3));
                g.mean_abs_diff(d, t)
            },
            sample(3, 3, 7),
        );
    }

    #[test]
    fn shared_param_node_is_cached() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::full(1, 1, 3.0));
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let p = g.mul(a, b);
        let grads = g.backward(p);
        assert_eq!(grads.param(&store, id).unwrap().item(), 6.0);
        let f = g.frozen(&store, id);
        assert_ne!(f, a);
    }
}
