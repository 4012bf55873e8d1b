//! Reverse-mode automatic differentiation over a recorded tape of matrix ops.
//!
//! Every forward computation in the trained pipeline is expressed as nodes on
//! a [`Tape`]; one [`Tape::backward`] pass then yields gradients for every
//! node, including the named parameters that seeded it. Ops are recorded
//! eagerly — the value of a node is computed at record time — so shape errors
//! surface at the faulty call, not at some later evaluation.
//!
//! The op set is exactly what the pipeline needs (dense products, broadcasts,
//! row softmax, activations, row concatenation/slicing, embedding gathers,
//! layer normalization, clamped logs for likelihood terms). Each backward
//! rule is written out long-hand and is covered by a finite-difference test
//! below.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::ParamStore;

/// Probability floor used by [`Tape::log_clamped`]; values are clamped into
/// `[PROB_FLOOR, 1 - PROB_FLOOR]` before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Pointwise nonlinearity tag used by gated layers and the classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Constant leaf: data the loss is not differentiated against.
    Input,
    /// Parameter leaf tagged with its index in the originating [`ParamStore`].
    Param(usize),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    AddRowBroadcast(NodeId, NodeId),
    MulRowBroadcast(NodeId, NodeId),
    SoftmaxRows(NodeId),
    Activate(NodeId, Activation),
    LogClamped(NodeId),
    RowMean(NodeId),
    SumAll(NodeId),
    ConcatRows(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Vec<usize>),
    PadCols(NodeId, usize),
    Reshape(NodeId, usize, usize),
    LayerNormRows(NodeId, f64),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// A recorded computation. Create one per batch, build the loss, call
/// [`Tape::backward_into`], drop it.
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1x1` node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.shape(), (1, 1));
        self.nodes[id.0].value.get(0, 0)
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Parameter leaf; `store_index` ties the node back to a [`ParamStore`]
    /// entry for gradient scatter in [`Tape::backward_into`].
    pub fn param(&mut self, store_index: usize, value: Matrix) -> NodeId {
        self.push(Op::Param(store_index), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a, c), v)
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row_broadcast(self.value(row))?;
        Ok(self.push(Op::AddRowBroadcast(a, row), v))
    }

    pub fn mul_row_broadcast(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul_row_broadcast(self.value(row))?;
        Ok(self.push(Op::MulRowBroadcast(a, row), v))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).softmax_rows();
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn activate(&mut self, a: NodeId, act: Activation) -> NodeId {
        let v = self.value(a).map(|x| act.apply(x));
        self.push(Op::Activate(a, act), v)
    }

    /// `ln(clamp(x, PROB_FLOOR, 1 - PROB_FLOOR))`, elementwise. Outside the
    /// clamp interval the derivative is 0.
    pub fn log_clamped(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .map(|x| x.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln());
        self.push(Op::LogClamped(a), v)
    }

    pub fn row_mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).row_mean()?;
        Ok(self.push(Op::RowMean(a), v))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::row(&[self.value(a).sum_all()]);
        self.push(Op::SumAll(a), v)
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.cols() != mb.cols() {
            return Err(Error::Shape {
                op: "concat_rows",
                lhs_rows: ma.rows(),
                lhs_cols: ma.cols(),
                rhs_rows: mb.rows(),
                rhs_cols: mb.cols(),
            });
        }
        let mut data = ma.data().to_vec();
        data.extend_from_slice(mb.data());
        let v = Matrix::from_vec(ma.rows() + mb.rows(), ma.cols(), data)?;
        Ok(self.push(Op::ConcatRows(a, b), v))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.rows() != mb.rows() {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs_rows: ma.rows(),
                lhs_cols: ma.cols(),
                rhs_rows: mb.rows(),
                rhs_cols: mb.cols(),
            });
        }
        let mut v = Matrix::zeros(ma.rows(), ma.cols() + mb.cols());
        for i in 0..ma.rows() {
            for j in 0..ma.cols() {
                v.set(i, j, ma.get(i, j));
            }
            for j in 0..mb.cols() {
                v.set(i, ma.cols() + j, mb.get(i, j));
            }
        }
        Ok(self.push(Op::ConcatCols(a, b), v))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let m = self.value(a);
        if start + len > m.rows() {
            return Err(Error::Input(format!(
                "slice_rows {start}..{} out of {} rows",
                start + len,
                m.rows()
            )));
        }
        let data = m.data()[start * m.cols()..(start + len) * m.cols()].to_vec();
        let v = Matrix::from_vec(len, m.cols(), data)?;
        Ok(self.push(Op::SliceRows(a, start, len), v))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let m = self.value(a);
        if start + len > m.cols() {
            return Err(Error::Input(format!(
                "slice_cols {start}..{} out of {} cols",
                start + len,
                m.cols()
            )));
        }
        let mut v = Matrix::zeros(m.rows(), len);
        for i in 0..m.rows() {
            for j in 0..len {
                v.set(i, j, m.get(i, start + j));
            }
        }
        Ok(self.push(Op::SliceCols(a, start, len), v))
    }

    /// Selects `ids` rows of a table; ids may repeat. Gradient accumulates
    /// back into the gathered rows, which is what embedding lookups need.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        let mut v = Matrix::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(Error::Lookup(format!(
                    "row id {id} out of range for a {}-row table",
                    t.rows()
                )));
            }
            for j in 0..t.cols() {
                v.set(i, j, t.get(id, j));
            }
        }
        Ok(self.push(Op::GatherRows(table, ids.to_vec()), v))
    }

    /// Zero-pads on the right to `new_cols`.
    pub fn pad_cols(&mut self, a: NodeId, new_cols: usize) -> Result<NodeId> {
        let m = self.value(a);
        if new_cols < m.cols() {
            return Err(Error::Input(format!(
                "pad_cols target {new_cols} below current width {}",
                m.cols()
            )));
        }
        let mut v = Matrix::zeros(m.rows(), new_cols);
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                v.set(i, j, m.get(i, j));
            }
        }
        Ok(self.push(Op::PadCols(a, new_cols), v))
    }

    /// Row-major reshape; total size must be preserved.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let m = self.value(a);
        if rows * cols != m.len() {
            return Err(Error::Input(format!(
                "reshape to {rows}x{cols} from {} entries",
                m.len()
            )));
        }
        let v = Matrix::from_vec(rows, cols, m.data().to_vec())?;
        Ok(self.push(Op::Reshape(a, rows, cols), v))
    }

    /// Per-row normalization to zero mean and unit variance (no affine part;
    /// compose with [`Tape::mul_row_broadcast`] / [`Tape::add_row_broadcast`]
    /// for a learned gain and bias).
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let m = self.value(a);
        let mut v = m.clone();
        for i in 0..m.rows() {
            let row = m.row_slice(i);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..row.len() {
                v.set(i, j, (row[j] - mean) * inv);
            }
        }
        self.push(Op::LayerNormRows(a, eps), v)
    }

    /// Mean of a list of `1x1` nodes; used to average per-example losses.
    pub fn mean_of(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::Input("mean of zero nodes".into()));
        }
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = self.add(acc, id)?;
        }
        Ok(self.scale(acc, 1.0 / ids.len() as f64))
    }

    /// Gradients of a scalar node with respect to every node on the tape.
    /// Entries stay `None` for nodes the loss does not depend on.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Matrix>>> {
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.shape() != (1, 1) {
            return Err(Error::Input(format!(
                "backward needs a 1x1 loss node, got {}x{}",
                loss_val.rows(),
                loss_val.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::row(&[1.0]));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // Re-insert so callers can inspect node gradients afterwards.
            let res = self.accumulate_parents(idx, &g, &mut grads);
            grads[idx] = Some(g);
            res?;
        }
        Ok(grads)
    }

    /// Runs [`Tape::backward`] and adds parameter-node gradients into the
    /// matching [`ParamStore`] entries.
    pub fn backward_into(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(store_index) = node.op {
                if let Some(g) = &grads[idx] {
                    store.accumulate_grad(store_index, g)?;
                }
            }
        }
        Ok(())
    }

    fn accumulate_parents(
        &self,
        idx: usize,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) -> Result<()> {
        let add_to = |grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix| -> Result<()> {
            match &mut grads[id.0] {
                Some(existing) => {
                    *existing = existing.add(&delta)?;
                }
                slot @ None => *slot = Some(delta),
            }
            Ok(())
        };

        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let da = g.matmul(&self.value(*b).transpose())?;
                let db = self.value(*a).transpose().matmul(g)?;
                add_to(grads, *a, da)?;
                add_to(grads, *b, db)?;
            }
            Op::Transpose(a) => add_to(grads, *a, g.transpose())?,
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone())?;
                add_to(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone())?;
                add_to(grads, *b, g.scale(-1.0))?;
            }
            Op::Hadamard(a, b) => {
                let da = g.hadamard(self.value(*b))?;
                let db = g.hadamard(self.value(*a))?;
                add_to(grads, *a, da)?;
                add_to(grads, *b, db)?;
            }
            Op::Scale(a, c) => add_to(grads, *a, g.scale(*c))?,
            Op::AddScalar(a, _) => add_to(grads, *a, g.clone())?,
            Op::AddRowBroadcast(a, row) => {
                add_to(grads, *a, g.clone())?;
                let mut drow = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        drow.set(0, j, drow.get(0, j) + g.get(i, j));
                    }
                }
                add_to(grads, *row, drow)?;
            }
            Op::MulRowBroadcast(a, row) => {
                let da = g.mul_row_broadcast(self.value(*row))?;
                add_to(grads, *a, da)?;
                let av = self.value(*a);
                let mut drow = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        drow.set(0, j, drow.get(0, j) + g.get(i, j) * av.get(i, j));
                    }
                }
                add_to(grads, *row, drow)?;
            }
            Op::SoftmaxRows(a) => {
                // Per row: dx = y .* (g - <g, y>), with y the softmax output.
                let y = &self.nodes[idx].value;
                let mut da = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = (0..y.cols()).map(|j| g.get(i, j) * y.get(i, j)).sum();
                    for j in 0..y.cols() {
                        da.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                add_to(grads, *a, da)?;
            }
            Op::Activate(a, act) => {
                let x = self.value(*a);
                let y = &self.nodes[idx].value;
                let mut da = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    for j in 0..x.cols() {
                        let d = match act {
                            Activation::Tanh => 1.0 - y.get(i, j) * y.get(i, j),
                            Activation::Relu => {
                                if x.get(i, j) > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Linear => 1.0,
                        };
                        da.set(i, j, g.get(i, j) * d);
                    }
                }
                add_to(grads, *a, da)?;
            }
            Op::LogClamped(a) => {
                let x = self.value(*a);
                let mut da = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    for j in 0..x.cols() {
                        let v = x.get(i, j);
                        let d = if v > PROB_FLOOR && v < 1.0 - PROB_FLOOR {
                            1.0 / v
                        } else {
                            0.0
                        };
                        da.set(i, j, g.get(i, j) * d);
                    }
                }
                add_to(grads, *a, da)?;
            }
            Op::RowMean(a) => {
                let src = self.value(*a);
                let inv = 1.0 / src.rows() as f64;
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for i in 0..src.rows() {
                    for j in 0..src.cols() {
                        da.set(i, j, g.get(0, j) * inv);
                    }
                }
                add_to(grads, *a, da)?;
            }
            Op::SumAll(a) => {
                let src = self.value(*a);
                let seed = g.get(0, 0);
                add_to(grads, *a, Matrix::zeros(src.rows(), src.cols()).map(|_| seed))?;
            }
            Op::ConcatRows(a, b) => {
                let ra = self.value(*a).rows();
                let cols = g.cols();
                let da =
                    Matrix::from_vec(ra, cols, g.data()[..ra * cols].to_vec())?;
                let db = Matrix::from_vec(
                    g.rows() - ra,
                    cols,
                    g.data()[ra * cols..].to_vec(),
                )?;
                add_to(grads, *a, da)?;
                add_to(grads, *b, db)?;
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let mut da = Matrix::zeros(g.rows(), ca);
                let mut db = Matrix::zeros(g.rows(), g.cols() - ca);
                for i in 0..g.rows() {
                    for j in 0..ca {
                        da.set(i, j, g.get(i, j));
                    }
                    for j in ca..g.cols() {
                        db.set(i, j - ca, g.get(i, j));
                    }
                }
                add_to(grads, *a, da)?;
                add_to(grads, *b, db)?;
            }
            Op::SliceRows(a, start, len) => {
                let src = self.value(*a);
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for i in 0..*len {
                    for j in 0..src.cols() {
                        da.set(start + i, j, g.get(i, j));
                    }
                }
                add_to(grads, *a, da)?;
            }
            Op::SliceCols(a, start, len) => {
                let src = self.value(*a);
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for i in 0..src.rows() {
                    for j in 0..*len {
                        da.set(i, start + j, g.get(i, j));
                    }
                }
                add_to(grads, *a, da)?;
            }
            Op::GatherRows(table, ids) => {
                let t = self.value(*table);
                let mut dt = Matrix::zeros(t.rows(), t.cols());
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..t.cols() {
                        dt.set(id, j, dt.get(id, j) + g.get(i, j));
                    }
                }
                add_to(grads, *table, dt)?;
            }
            Op::PadCols(a, _) => {
                let src = self.value(*a);
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for i in 0..src.rows() {
                    for j in 0..src.cols() {
                        da.set(i, j, g.get(i, j));
                    }
                }
                add_to(grads, *a, da)?;
            }
            Op::Reshape(a, _, _) => {
                let src = self.value(*a);
                let da = Matrix::from_vec(src.rows(), src.cols(), g.data().to_vec())?;
                add_to(grads, *a, da)?;
            }
            Op::LayerNormRows(a, eps) => {
                // Rowwise, with xhat the normalized output:
                // dx = inv * (g - mean(g) - xhat * mean(g .* xhat))
                let x = self.value(*a);
                let y = &self.nodes[idx].value;
                let mut da = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let row = x.row_slice(i);
                    let n = row.len() as f64;
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let g_mean: f64 = (0..row.len()).map(|j| g.get(i, j)).sum::<f64>() / n;
                    let gx_mean: f64 = (0..row.len())
                        .map(|j| g.get(i, j) * y.get(i, j))
                        .sum::<f64>()
                        / n;
                    for j in 0..row.len() {
                        da.set(
                            i,
                            j,
                            inv * (g.get(i, j) - g_mean - y.get(i, j) * gx_mean),
                        );
                    }
                }
                add_to(grads, *a, da)?;
            }
        }
        Ok(())
    }
}
