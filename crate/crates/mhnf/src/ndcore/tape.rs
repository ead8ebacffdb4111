//! Reverse-mode automatic differentiation over matrix values.
//!
//! A [`Tape`] is an arena of nodes in topological order: every operation
//! reads parent values, computes its result eagerly, and records enough to
//! run the chain rule backwards. Values are either dense matrices or shared
//! CSR matrices; gradients of sparse nodes live only on the stored entries
//! of the forward value, which is exactly what the hybrid-adjacency chain
//! needs (perturbing a mixing weight never creates edges).
//!
//! The op set is deliberately small: it covers the model's computation
//! graph and nothing else. A tape is confined to one thread and rebuilt
//! every forward pass.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::{DenseMatrix, SparseMatrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// A forward value: dense, or a shared sparse matrix.
#[derive(Clone, Debug)]
pub enum Value {
    Dense(DenseMatrix),
    Sparse(Arc<SparseMatrix>),
}

impl Value {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Value::Dense(m) => m.shape(),
            Value::Sparse(m) => m.shape(),
        }
    }
}

#[derive(Debug)]
enum Grad {
    Dense(DenseMatrix),
    /// Aligned with the stored entries of the node's forward value.
    Sparse(Vec<f64>),
}

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Spmm(NodeId, NodeId),
    Spspmm(NodeId, NodeId),
    WeightedSumSparse {
        mats: Vec<Arc<SparseMatrix>>,
        w: NodeId,
    },
    MaskedRowSoftmax(NodeId),
    RowNormalize(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    RowSoftmax(NodeId),
    Add(NodeId, NodeId),
    AddRowBroadcast(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceRows {
        a: NodeId,
        start: usize,
    },
    /// y(i,:) = Σ_l weights(i,l) · parts[l](i,:)
    WeightedMix {
        weights: NodeId,
        parts: Vec<NodeId>,
    },
    SumAll(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        mask: Vec<usize>,
    },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
    grad: Option<Grad>,
}

/// The recorded computation graph for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value, op: Op, needs_grad: bool) -> NodeId {
        // NaN means a logic bug (0/0, inf-inf); overflow to infinity is
        // possible for diverging parameters and is policed by the trainer.
        debug_assert!(
            match &value {
                Value::Dense(m) => !m.values().iter().any(|v| v.is_nan()),
                Value::Sparse(m) => !m.values().iter().any(|v| v.is_nan()),
            },
            "tape op produced NaN"
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Dense leaf that participates in gradient computation.
    pub fn param(&mut self, m: DenseMatrix) -> NodeId {
        self.push(Value::Dense(m), Op::Leaf, true)
    }

    /// Dense leaf treated as a constant.
    pub fn dense_const(&mut self, m: DenseMatrix) -> NodeId {
        self.push(Value::Dense(m), Op::Leaf, false)
    }

    /// Sparse leaf treated as a constant (e.g. a relation matrix).
    pub fn sparse_const(&mut self, m: Arc<SparseMatrix>) -> NodeId {
        self.push(Value::Sparse(m), Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id.0].value
    }

    pub fn dense(&self, id: NodeId) -> &DenseMatrix {
        match &self.nodes[id.0].value {
            Value::Dense(m) => m,
            Value::Sparse(_) => panic!("expected dense node"),
        }
    }

    pub fn sparse(&self, id: NodeId) -> &SparseMatrix {
        match &self.nodes[id.0].value {
            Value::Sparse(m) => m,
            Value::Dense(_) => panic!("expected sparse node"),
        }
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let m = self.dense(id);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m.get(0, 0)
    }

    /// Gradient of a dense node after [`Tape::backward`]; `None` if no
    /// gradient reached it.
    pub fn grad_dense(&self, id: NodeId) -> Option<&DenseMatrix> {
        match self.nodes[id.0].grad.as_ref() {
            Some(Grad::Dense(g)) => Some(g),
            _ => None,
        }
    }

    // ---- forward ops -------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.dense(a).matmul(self.dense(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Dense(out), Op::Matmul(a, b), needs))
    }

    pub fn spmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.sparse(a).spmm(self.dense(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Dense(out), Op::Spmm(a, b), needs))
    }

    pub fn spspmm(&mut self, a: NodeId, b: NodeId, threshold: f64) -> Result<NodeId> {
        let out = self.sparse(a).spspmm(self.sparse(b), threshold)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Sparse(Arc::new(out)), Op::Spspmm(a, b), needs))
    }

    /// Entrywise Σ_m w(m) · mats\[m\]; `w` must be a 1 x |mats| dense node.
    pub fn weighted_sum_sparse(
        &mut self,
        mats: Vec<Arc<SparseMatrix>>,
        w: NodeId,
    ) -> Result<NodeId> {
        let wv = self.dense(w);
        if wv.rows() != 1 || wv.cols() != mats.len() {
            return Err(Error::InvalidArgument {
                op: "weighted_sum_sparse",
                msg: format!("weight shape {:?} for {} matrices", wv.shape(), mats.len()),
            });
        }
        let refs: Vec<&SparseMatrix> = mats.iter().map(|m| m.as_ref()).collect();
        let out = SparseMatrix::weighted_sum(&refs, wv.values())?;
        let needs = self.needs(w);
        Ok(self.push(
            Value::Sparse(Arc::new(out)),
            Op::WeightedSumSparse { mats, w },
            needs,
        ))
    }

    pub fn masked_row_softmax(&mut self, a: NodeId) -> NodeId {
        let out = self.sparse(a).masked_row_softmax();
        let needs = self.needs(a);
        self.push(Value::Sparse(Arc::new(out)), Op::MaskedRowSoftmax(a), needs)
    }

    pub fn row_normalize(&mut self, a: NodeId) -> NodeId {
        let out = self.sparse(a).row_normalize();
        let needs = self.needs(a);
        self.push(Value::Sparse(Arc::new(out)), Op::RowNormalize(a), needs)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.dense(a).map(|v| v.max(0.0));
        let needs = self.needs(a);
        self.push(Value::Dense(out), Op::Relu(a), needs)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let out = self.dense(a).map(|v| if v > 0.0 { v } else { slope * v });
        let needs = self.needs(a);
        self.push(Value::Dense(out), Op::LeakyRelu(a, slope), needs)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.dense(a).map(f64::tanh);
        let needs = self.needs(a);
        self.push(Value::Dense(out), Op::Tanh(a), needs)
    }

    /// Elementwise exp; rejects inputs that would overflow to infinity.
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        if self.dense(a).values().iter().any(|&v| v > 709.0) {
            return Err(Error::InvalidArgument {
                op: "exp",
                msg: "input would overflow".into(),
            });
        }
        let out = self.dense(a).map(f64::exp);
        let needs = self.needs(a);
        Ok(self.push(Value::Dense(out), Op::Exp(a), needs))
    }

    /// Elementwise natural log; defined for strictly positive inputs.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if self.dense(a).values().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidArgument {
                op: "log",
                msg: "input must be strictly positive".into(),
            });
        }
        let out = self.dense(a).map(f64::ln);
        let needs = self.needs(a);
        Ok(self.push(Value::Dense(out), Op::Log(a), needs))
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let out = self.dense(a).row_softmax();
        let needs = self.needs(a);
        self.push(Value::Dense(out), Op::RowSoftmax(a), needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.dense(a).add(self.dense(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Value::Dense(out), Op::Add(a, b), needs))
    }

    /// (n x c) + (1 x c) broadcast over rows.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.dense(a), self.dense(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape("add_row_broadcast", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Value::Dense(out), Op::AddRowBroadcast(a, bias), needs))
    }

    /// Horizontal concatenation; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "concat_cols",
                msg: "no parts".into(),
            });
        }
        let rows = self.dense(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.dense(p).cols()).sum();
        let mut out = DenseMatrix::zeros(rows, total);
        let mut col = 0;
        for &p in parts {
            let m = self.dense(p);
            if m.rows() != rows {
                return Err(Error::shape("concat_cols", (rows, total), m.shape()));
            }
            for r in 0..rows {
                out.row_mut(r)[col..col + m.cols()].copy_from_slice(m.row(r));
            }
            col += m.cols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Value::Dense(out), Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Vertical concatenation; all parts share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "concat_rows",
                msg: "no parts".into(),
            });
        }
        let cols = self.dense(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.dense(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let m = self.dense(p);
            if m.cols() != cols {
                return Err(Error::shape("concat_rows", (rows, cols), m.shape()));
            }
            data.extend_from_slice(m.values());
        }
        let out = DenseMatrix::from_vec(rows, cols, data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Value::Dense(out), Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let out = self.dense(a).slice_rows(start, len)?;
        let needs = self.needs(a);
        Ok(self.push(Value::Dense(out), Op::SliceRows { a, start }, needs))
    }

    /// Per-row convex-style mixture: out(i,:) = Σ_l weights(i,l)·parts\[l\](i,:).
    pub fn weighted_mix(&mut self, weights: NodeId, parts: &[NodeId]) -> Result<NodeId> {
        let wv = self.dense(weights);
        let (rows, k) = wv.shape();
        if k != parts.len() {
            return Err(Error::InvalidArgument {
                op: "weighted_mix",
                msg: format!("{} weight columns for {} parts", k, parts.len()),
            });
        }
        let cols = self.dense(parts[0]).cols();
        for &p in parts {
            if self.dense(p).shape() != (rows, cols) {
                return Err(Error::shape("weighted_mix", (rows, cols), self.dense(p).shape()));
            }
        }
        let mut out = DenseMatrix::zeros(rows, cols);
        for (l, &p) in parts.iter().enumerate() {
            let pm = self.dense(p);
            let wv = self.dense(weights);
            for r in 0..rows {
                let w = wv.get(r, l);
                if w == 0.0 {
                    continue;
                }
                for (o, &s) in out.row_mut(r).iter_mut().zip(pm.row(r)) {
                    *o += w * s;
                }
            }
        }
        let needs = self.needs(weights) || parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Value::Dense(out),
            Op::WeightedMix {
                weights,
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.dense(a).values().iter().sum();
        let needs = self.needs(a);
        self.push(
            Value::Dense(DenseMatrix::from_vec(1, 1, vec![s]).unwrap()),
            Op::SumAll(a),
            needs,
        )
    }

    /// Mean over `mask` rows of −log softmax(logits)\[label\], as a 1x1 node.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize], mask: &[usize]) -> Result<NodeId> {
        let lm = self.dense(logits);
        let (rows, classes) = lm.shape();
        if mask.is_empty() {
            return Err(Error::InvalidArgument {
                op: "cross_entropy",
                msg: "empty mask: loss undefined".into(),
            });
        }
        if labels.len() != rows {
            return Err(Error::InvalidArgument {
                op: "cross_entropy",
                msg: format!("{} labels for {} rows", labels.len(), rows),
            });
        }
        let mut total = 0.0;
        for &r in mask {
            if r >= rows {
                return Err(Error::InvalidArgument {
                    op: "cross_entropy",
                    msg: format!("mask row {r} out of range"),
                });
            }
            let label = labels[r];
            if label >= classes {
                return Err(Error::InvalidArgument {
                    op: "cross_entropy",
                    msg: format!("label {label} out of range for {classes} classes"),
                });
            }
            let row = lm.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[label];
        }
        let loss = total / mask.len() as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Value::Dense(DenseMatrix::from_vec(1, 1, vec![loss]).unwrap()),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    // ---- backward -----------------------------------------------------

    /// Runs backpropagation from a scalar node, populating gradients for
    /// every node that influences it.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        match &self.nodes[loss.0].value {
            Value::Dense(m) if m.shape() == (1, 1) => {}
            v => {
                return Err(Error::InvalidArgument {
                    op: "backward",
                    msg: format!("loss must be 1x1, got {:?}", v.shape()),
                })
            }
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Grad::Dense(
            DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap(),
        ));

        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            // Parents always precede node i, so split to borrow both sides.
            let (parents, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let grad = node.grad.as_ref().unwrap();
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => backward_matmul(parents, *a, *b, grad_dense(grad)),
                Op::Spmm(a, b) => backward_spmm(parents, *a, *b, grad_dense(grad)),
                Op::Spspmm(a, b) => {
                    backward_spspmm(parents, *a, *b, &node.value, grad_sparse(grad))
                }
                Op::WeightedSumSparse { mats, w } => {
                    backward_weighted_sum(parents, mats, *w, &node.value, grad_sparse(grad))
                }
                Op::MaskedRowSoftmax(a) => {
                    backward_masked_softmax(parents, *a, &node.value, grad_sparse(grad))
                }
                Op::RowNormalize(a) => {
                    backward_row_normalize(parents, *a, &node.value, grad_sparse(grad))
                }
                Op::Relu(a) => backward_unary(parents, *a, grad_dense(grad), |x, _| {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }),
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    backward_unary(parents, *a, grad_dense(grad), move |x, _| {
                        if x > 0.0 {
                            1.0
                        } else {
                            slope
                        }
                    })
                }
                Op::Tanh(a) => backward_unary_from_out(parents, *a, &node.value, grad_dense(grad), |y| 1.0 - y * y),
                Op::Exp(a) => backward_unary_from_out(parents, *a, &node.value, grad_dense(grad), |y| y),
                Op::Log(a) => backward_unary(parents, *a, grad_dense(grad), |x, _| 1.0 / x),
                Op::RowSoftmax(a) => {
                    backward_row_softmax(parents, *a, &node.value, grad_dense(grad))
                }
                Op::Add(a, b) => {
                    let g = grad_dense(grad).clone();
                    accumulate_dense(parents, *a, &g);
                    accumulate_dense(parents, *b, &g);
                }
                Op::AddRowBroadcast(a, bias) => {
                    let g = grad_dense(grad);
                    let mut bias_g = DenseMatrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in bias_g.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    let g = g.clone();
                    accumulate_dense(parents, *a, &g);
                    accumulate_dense(parents, *bias, &bias_g);
                }
                Op::ConcatCols(parts) => backward_concat_cols(parents, parts, grad_dense(grad)),
                Op::ConcatRows(parts) => backward_concat_rows(parents, parts, grad_dense(grad)),
                Op::SliceRows { a, start } => {
                    let g = grad_dense(grad);
                    if parents[a.0].needs_grad {
                        let pm_shape = parents[a.0].value.shape();
                        let mut full = DenseMatrix::zeros(pm_shape.0, pm_shape.1);
                        for r in 0..g.rows() {
                            full.row_mut(start + r).copy_from_slice(g.row(r));
                        }
                        accumulate_dense(parents, *a, &full);
                    }
                }
                Op::WeightedMix { weights, parts } => {
                    backward_weighted_mix(parents, *weights, parts, grad_dense(grad))
                }
                Op::SumAll(a) => {
                    let g = grad_dense(grad).get(0, 0);
                    if parents[a.0].needs_grad {
                        let (r, c) = parents[a.0].value.shape();
                        let ones = DenseMatrix::from_vec(r, c, vec![g; r * c]).unwrap();
                        accumulate_dense(parents, *a, &ones);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    mask,
                } => backward_cross_entropy(parents, *logits, labels, mask, grad_dense(grad)),
            }
        }
        Ok(())
    }
}

fn grad_dense(g: &Grad) -> &DenseMatrix {
    match g {
        Grad::Dense(m) => m,
        Grad::Sparse(_) => panic!("expected dense gradient"),
    }
}

fn grad_sparse(g: &Grad) -> &[f64] {
    match g {
        Grad::Sparse(v) => v,
        Grad::Dense(_) => panic!("expected sparse gradient"),
    }
}

fn dense_value(nodes: &[Node], id: NodeId) -> &DenseMatrix {
    match &nodes[id.0].value {
        Value::Dense(m) => m,
        Value::Sparse(_) => panic!("expected dense node"),
    }
}

fn sparse_value(nodes: &[Node], id: NodeId) -> &SparseMatrix {
    match &nodes[id.0].value {
        Value::Sparse(m) => m,
        Value::Dense(_) => panic!("expected sparse node"),
    }
}

fn accumulate_dense(nodes: &mut [Node], id: NodeId, g: &DenseMatrix) {
    if !nodes[id.0].needs_grad {
        return;
    }
    let shape = nodes[id.0].value.shape();
    debug_assert_eq!(shape, g.shape());
    let slot = nodes[id.0]
        .grad
        .get_or_insert_with(|| Grad::Dense(DenseMatrix::zeros(shape.0, shape.1)));
    match slot {
        Grad::Dense(acc) => {
            for (a, &b) in acc.values_mut().iter_mut().zip(g.values()) {
                *a += b;
            }
        }
        Grad::Sparse(_) => unreachable!(),
    }
}

fn accumulate_sparse_entries(nodes: &mut [Node], id: NodeId, add: impl FnOnce(&mut [f64], &SparseMatrix)) {
    if !nodes[id.0].needs_grad {
        return;
    }
    let nnz = match &nodes[id.0].value {
        Value::Sparse(m) => m.nnz(),
        Value::Dense(_) => panic!("expected sparse node"),
    };
    if nodes[id.0].grad.is_none() {
        nodes[id.0].grad = Some(Grad::Sparse(vec![0.0; nnz]));
    }
    // Take the slot so the closure can also read the node's forward value.
    let mut slot = nodes[id.0].grad.take().unwrap();
    match &mut slot {
        Grad::Sparse(acc) => {
            let value = match &nodes[id.0].value {
                Value::Sparse(m) => m.clone(),
                Value::Dense(_) => unreachable!(),
            };
            add(acc, &value);
        }
        Grad::Dense(_) => unreachable!(),
    }
    nodes[id.0].grad = Some(slot);
}

fn backward_matmul(nodes: &mut [Node], a: NodeId, b: NodeId, g: &DenseMatrix) {
    if nodes[a.0].needs_grad {
        let bv = dense_value(nodes, b);
        let ga = g.matmul(&bv.transpose()).expect("matmul backward shape");
        accumulate_dense(nodes, a, &ga);
    }
    if nodes[b.0].needs_grad {
        let av = dense_value(nodes, a);
        let gb = av.transpose().matmul(g).expect("matmul backward shape");
        accumulate_dense(nodes, b, &gb);
    }
}

fn backward_spmm(nodes: &mut [Node], a: NodeId, b: NodeId, g: &DenseMatrix) {
    if nodes[b.0].needs_grad {
        let av = sparse_value(nodes, a);
        let gb = av.transpose().spmm(g).expect("spmm backward shape");
        accumulate_dense(nodes, b, &gb);
    }
    if nodes[a.0].needs_grad {
        // dL/dA(i,k) = dot(G row i, B row k) over stored entries.
        let av = sparse_value(nodes, a).clone();
        let bv = dense_value(nodes, b).clone();
        let mut contrib = vec![0.0; av.nnz()];
        let mut slot = 0;
        for r in 0..av.rows() {
            let (cols, _) = av.row(r);
            let grow = g.row(r);
            for &k in cols {
                let brow = bv.row(k);
                let mut acc = 0.0;
                for (gv, bvv) in grow.iter().zip(brow) {
                    acc += gv * bvv;
                }
                contrib[slot] = acc;
                slot += 1;
            }
        }
        accumulate_sparse_entries(nodes, a, |acc, _| {
            for (a, b) in acc.iter_mut().zip(&contrib) {
                *a += b;
            }
        });
    }
}

fn backward_spspmm(nodes: &mut [Node], a: NodeId, b: NodeId, out: &Value, g: &[f64]) {
    let out = match out {
        Value::Sparse(m) => m.clone(),
        Value::Dense(_) => unreachable!(),
    };
    let av = sparse_value(nodes, a).clone();
    let bv = sparse_value(nodes, b).clone();

    if nodes[a.0].needs_grad {
        // dL/dA(i,k) = Σ_j G(i,j)·B(k,j), G on the realized output pattern.
        let mut contrib = vec![0.0; av.nnz()];
        let mut scratch = vec![0.0; out.cols()];
        let mut slot = 0;
        for r in 0..av.rows() {
            let (ocols, _) = out.row(r);
            let gs = &g[out.row_ptr()[r]..out.row_ptr()[r + 1]];
            for (&j, &gv) in ocols.iter().zip(gs) {
                scratch[j] = gv;
            }
            let (acols, _) = av.row(r);
            for &k in acols {
                let (bcols, bvals) = bv.row(k);
                let mut acc = 0.0;
                for (&j, &bvv) in bcols.iter().zip(bvals) {
                    acc += scratch[j] * bvv;
                }
                contrib[slot] = acc;
                slot += 1;
            }
            for &j in ocols {
                scratch[j] = 0.0;
            }
        }
        accumulate_sparse_entries(nodes, a, |acc, _| {
            for (x, y) in acc.iter_mut().zip(&contrib) {
                *x += y;
            }
        });
    }

    if nodes[b.0].needs_grad {
        // dL/dB(k,j) = Σ_i A(i,k)·G(i,j), restricted to B's pattern.
        let mut contrib = vec![0.0; bv.nnz()];
        for r in 0..av.rows() {
            let (acols, avals) = av.row(r);
            let (ocols, _) = out.row(r);
            let gs = &g[out.row_ptr()[r]..out.row_ptr()[r + 1]];
            for (&k, &akv) in acols.iter().zip(avals) {
                let (bcols, _) = bv.row(k);
                let base = bv.row_ptr()[k];
                for (&j, &gv) in ocols.iter().zip(gs) {
                    if let Ok(pos) = bcols.binary_search(&j) {
                        contrib[base + pos] += akv * gv;
                    }
                }
            }
        }
        accumulate_sparse_entries(nodes, b, |acc, _| {
            for (x, y) in acc.iter_mut().zip(&contrib) {
                *x += y;
            }
        });
    }
}

fn backward_weighted_sum(
    nodes: &mut [Node],
    mats: &[Arc<SparseMatrix>],
    w: NodeId,
    out: &Value,
    g: &[f64],
) {
    if !nodes[w.0].needs_grad {
        return;
    }
    let out = match out {
        Value::Sparse(m) => m.clone(),
        Value::Dense(_) => unreachable!(),
    };
    // dL/dw_m = Σ over entries in out's pattern of G(i,j)·M_m(i,j).
    let mut gw = DenseMatrix::zeros(1, mats.len());
    let mut scratch = vec![0.0; out.cols()];
    for r in 0..out.rows() {
        let (ocols, _) = out.row(r);
        let gs = &g[out.row_ptr()[r]..out.row_ptr()[r + 1]];
        if ocols.is_empty() {
            continue;
        }
        for (&j, &gv) in ocols.iter().zip(gs) {
            scratch[j] = gv;
        }
        for (m, mat) in mats.iter().enumerate() {
            let (mcols, mvals) = mat.row(r);
            let mut acc = 0.0;
            for (&c, &v) in mcols.iter().zip(mvals) {
                acc += scratch[c] * v;
            }
            gw.set(0, m, gw.get(0, m) + acc);
        }
        for &j in ocols {
            scratch[j] = 0.0;
        }
    }
    accumulate_dense(nodes, w, &gw);
}

fn backward_masked_softmax(nodes: &mut [Node], a: NodeId, out: &Value, g: &[f64]) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let out = match out {
        Value::Sparse(m) => m.clone(),
        Value::Dense(_) => unreachable!(),
    };
    // Same pattern as the input by construction.
    let mut contrib = vec![0.0; out.nnz()];
    for r in 0..out.rows() {
        let (lo, hi) = (out.row_ptr()[r], out.row_ptr()[r + 1]);
        if lo == hi {
            continue;
        }
        let y = &out.values()[lo..hi];
        let gr = &g[lo..hi];
        let dot: f64 = y.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
        for ((c, yv), gv) in contrib[lo..hi].iter_mut().zip(y).zip(gr) {
            *c = yv * (gv - dot);
        }
    }
    accumulate_sparse_entries(nodes, a, |acc, _| {
        for (x, y) in acc.iter_mut().zip(&contrib) {
            *x += y;
        }
    });
}

fn backward_row_normalize(nodes: &mut [Node], a: NodeId, out: &Value, g: &[f64]) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let out = match out {
        Value::Sparse(m) => m.clone(),
        Value::Dense(_) => unreachable!(),
    };
    let av = sparse_value(nodes, a).clone();
    // y = x / r with r the row sum: dL/dx_k = (G_k − Σ_j G_j y_j) / r.
    let mut contrib = vec![0.0; av.nnz()];
    for r in 0..av.rows() {
        let (lo, hi) = (av.row_ptr()[r], av.row_ptr()[r + 1]);
        if lo == hi {
            continue;
        }
        let rsum: f64 = av.values()[lo..hi].iter().sum();
        if rsum == 0.0 {
            continue;
        }
        let y = &out.values()[lo..hi];
        let gr = &g[lo..hi];
        let dot: f64 = y.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
        for (c, gv) in contrib[lo..hi].iter_mut().zip(gr) {
            *c = (gv - dot) / rsum;
        }
    }
    accumulate_sparse_entries(nodes, a, |acc, _| {
        for (x, y) in acc.iter_mut().zip(&contrib) {
            *x += y;
        }
    });
}

fn backward_unary(nodes: &mut [Node], a: NodeId, g: &DenseMatrix, df: impl Fn(f64, f64) -> f64) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let x = dense_value(nodes, a);
    let mut out = g.clone();
    for (o, &xv) in out.values_mut().iter_mut().zip(x.values()) {
        *o *= df(xv, 0.0);
    }
    accumulate_dense(nodes, a, &out);
}

fn backward_unary_from_out(
    nodes: &mut [Node],
    a: NodeId,
    y: &Value,
    g: &DenseMatrix,
    df: impl Fn(f64) -> f64,
) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let y = match y {
        Value::Dense(m) => m,
        Value::Sparse(_) => unreachable!(),
    };
    let mut out = g.clone();
    for (o, &yv) in out.values_mut().iter_mut().zip(y.values()) {
        *o *= df(yv);
    }
    accumulate_dense(nodes, a, &out);
}

fn backward_row_softmax(nodes: &mut [Node], a: NodeId, y: &Value, g: &DenseMatrix) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let y = match y {
        Value::Dense(m) => m,
        Value::Sparse(_) => unreachable!(),
    };
    let mut out = DenseMatrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let gr = g.row(r);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    accumulate_dense(nodes, a, &out);
}

fn backward_concat_cols(nodes: &mut [Node], parts: &[NodeId], g: &DenseMatrix) {
    let mut col = 0;
    for &p in parts {
        let (rows, cols) = nodes[p.0].value.shape();
        if nodes[p.0].needs_grad {
            let mut gp = DenseMatrix::zeros(rows, cols);
            for r in 0..rows {
                gp.row_mut(r).copy_from_slice(&g.row(r)[col..col + cols]);
            }
            accumulate_dense(nodes, p, &gp);
        }
        col += cols;
    }
}

fn backward_concat_rows(nodes: &mut [Node], parts: &[NodeId], g: &DenseMatrix) {
    let mut row = 0;
    for &p in parts {
        let (rows, cols) = nodes[p.0].value.shape();
        if nodes[p.0].needs_grad {
            let gp = g.slice_rows(row, rows).expect("concat_rows backward shape");
            debug_assert_eq!(gp.cols(), cols);
            accumulate_dense(nodes, p, &gp);
        }
        row += rows;
    }
}

fn backward_weighted_mix(nodes: &mut [Node], weights: NodeId, parts: &[NodeId], g: &DenseMatrix) {
    let wv = dense_value(nodes, weights).clone();
    let (rows, _) = wv.shape();
    for (l, &p) in parts.iter().enumerate() {
        if nodes[p.0].needs_grad {
            let mut gp = g.clone();
            for r in 0..rows {
                let w = wv.get(r, l);
                for v in gp.row_mut(r) {
                    *v *= w;
                }
            }
            accumulate_dense(nodes, p, &gp);
        }
    }
    if nodes[weights.0].needs_grad {
        let mut gw = DenseMatrix::zeros(rows, parts.len());
        for (l, &p) in parts.iter().enumerate() {
            let pv = dense_value(nodes, p);
            for r in 0..rows {
                let dot: f64 = g.row(r).iter().zip(pv.row(r)).map(|(a, b)| a * b).sum();
                gw.set(r, l, dot);
            }
        }
        accumulate_dense(nodes, weights, &gw);
    }
}

fn backward_cross_entropy(
    nodes: &mut [Node],
    logits: NodeId,
    labels: &[usize],
    mask: &[usize],
    g: &DenseMatrix,
) {
    if !nodes[logits.0].needs_grad {
        return;
    }
    let upstream = g.get(0, 0);
    let lm = dense_value(nodes, logits);
    let mut out = DenseMatrix::zeros(lm.rows(), lm.cols());
    let scale = upstream / mask.len() as f64;
    for &r in mask {
        let row = lm.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let orow = out.row_mut(r);
        for (c, e) in exps.iter().enumerate() {
            orow[c] += scale * (e / sum);
        }
        orow[labels[r]] -= scale;
    }
    accumulate_dense(nodes, logits, &out);
}
