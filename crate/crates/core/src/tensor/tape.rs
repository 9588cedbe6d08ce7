//! Differentiation tape.
//!
//! Ops append nodes in construction order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep that
//! visits every node exactly once. A tape is single-writer; independent
//! tapes on different threads share nothing.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    AddRow { a: usize, row: usize },
    Transpose { a: usize },
    SoftmaxRows { a: usize },
    Sigmoid { a: usize },
    Relu { a: usize },
    LayerNorm { a: usize, gamma: usize, beta: usize, eps: f64 },
    ConcatCols { parts: Vec<usize> },
    SliceCols { a: usize, start: usize, width: usize },
    Gather { table: usize, ids: Vec<usize> },
    MaskedMeanPool { a: usize, mask: Vec<u8> },
    Reshape { a: usize },
    Sum { a: usize },
    BceLoss { probs: usize, targets: Vec<f64>, clamp: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records ops for one forward computation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op });
        NodeId {
            tape: self.id,
            index,
        }
    }

    fn check(&self, id: NodeId, op: &'static str) -> Result<usize> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(Error::shape(op, "node does not belong to this tape"));
        }
        Ok(id.index)
    }

    fn tensor(&self, idx: usize) -> &Tensor {
        &self.nodes[idx].value
    }

    /// Current value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        assert_eq!(id.tape, self.id, "node from another tape");
        &self.nodes[id.index].value
    }

    /// Record an input value (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = (self.check(a, "matmul")?, self.check(b, "matmul")?);
        let (ta, tb) = (self.tensor(ai), self.tensor(bi));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (n, k, p) = (ta.rows(), ta.cols(), tb.cols());
        let data = kernels::matmul(ta.data(), tb.data(), n, k, p);
        Ok(self.push(Tensor::new(vec![n, p], data)?, Op::MatMul { a: ai, b: bi }))
    }

    fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<NodeId> {
        let (ai, bi) = (self.check(a, name)?, self.check(b, name)?);
        let (ta, tb) = (self.tensor(ai), self.tensor(bi));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.iter().zip(tb.iter()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(ta.with_data(data)?, op(ai, bi)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let ai = self.check(a, "scale")?;
        let ta = self.tensor(ai);
        let data = ta.iter().map(|&x| x * factor).collect();
        Ok(self.push(ta.with_data(data)?, Op::Scale { a: ai, factor }))
    }

    /// Broadcast `row` (rank-1, length d) over every row of `a` (n×d).
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (ai, ri) = (self.check(a, "add_row")?, self.check(row, "add_row")?);
        let (ta, tr) = (self.tensor(ai), self.tensor(ri));
        if !ta.is_matrix() || tr.rank() != 1 || tr.cols() != ta.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", ta.shape(), tr.shape()),
            ));
        }
        let cols = ta.cols();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(cols) {
            for (o, &r) in chunk.iter_mut().zip(tr.iter()) {
                *o += r;
            }
        }
        Ok(self.push(ta.with_data(data)?, Op::AddRow { a: ai, row: ri }))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let ai = self.check(a, "transpose")?;
        let ta = self.tensor(ai);
        if !ta.is_matrix() {
            return Err(Error::shape(
                "transpose",
                format!("rank-2 required, got {:?}", ta.shape()),
            ));
        }
        let (n, k) = (ta.rows(), ta.cols());
        let data = kernels::transpose(ta.data(), n, k);
        Ok(self.push(Tensor::new(vec![k, n], data)?, Op::Transpose { a: ai }))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let ai = self.check(a, "softmax_rows")?;
        let ta = self.tensor(ai);
        if !ta.is_matrix() {
            return Err(Error::shape(
                "softmax_rows",
                format!("rank-2 required, got {:?}", ta.shape()),
            ));
        }
        let data = kernels::softmax_rows(ta.data(), ta.rows(), ta.cols())?;
        Ok(self.push(ta.with_data(data)?, Op::SoftmaxRows { a: ai }))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let ai = self.check(a, "sigmoid")?;
        let ta = self.tensor(ai);
        let data = kernels::sigmoid(ta.data());
        Ok(self.push(ta.with_data(data)?, Op::Sigmoid { a: ai }))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let ai = self.check(a, "relu")?;
        let ta = self.tensor(ai);
        let data = kernels::relu(ta.data());
        Ok(self.push(ta.with_data(data)?, Op::Relu { a: ai }))
    }

    pub fn layer_norm(
        &mut self,
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let ai = self.check(a, "layer_norm")?;
        let gi = self.check(gamma, "layer_norm")?;
        let bi = self.check(beta, "layer_norm")?;
        let (ta, tg, tb) = (self.tensor(ai), self.tensor(gi), self.tensor(bi));
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        if !ta.is_matrix() || tg.numel() != ta.cols() || tb.numel() != ta.cols() {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "{:?} with gamma {:?}, beta {:?}",
                    ta.shape(),
                    tg.shape(),
                    tb.shape()
                ),
            ));
        }
        let data = kernels::layer_norm(ta.data(), ta.rows(), ta.cols(), tg.data(), tb.data(), eps);
        Ok(self.push(
            ta.with_data(data)?,
            Op::LayerNorm {
                a: ai,
                gamma: gi,
                beta: bi,
                eps,
            },
        ))
    }

    /// Concatenate rank-2 parts along columns; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no parts given"));
        }
        let mut idxs = Vec::with_capacity(parts.len());
        for &p in parts {
            idxs.push(self.check(p, "concat_cols")?);
        }
        let rows = self.tensor(idxs[0]).rows();
        for &i in &idxs {
            let t = self.tensor(i);
            if !t.is_matrix() || t.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row-count mismatch: {:?}", t.shape()),
                ));
            }
        }
        let total: usize = idxs.iter().map(|&i| self.tensor(i).cols()).sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for &i in &idxs {
            let t = self.tensor(i);
            let w = t.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::ConcatCols { parts: idxs },
        ))
    }

    /// Columns `start..start+width` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let ai = self.check(a, "slice_cols")?;
        let ta = self.tensor(ai);
        if !ta.is_matrix() || start + width > ta.cols() || width == 0 {
            return Err(Error::shape(
                "slice_cols",
                format!("{}..{} of {:?}", start, start + width, ta.shape()),
            ));
        }
        let (rows, cols) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; rows * width];
        for r in 0..rows {
            data[r * width..(r + 1) * width]
                .copy_from_slice(&ta.data()[r * cols + start..r * cols + start + width]);
        }
        Ok(self.push(
            Tensor::new(vec![rows, width], data)?,
            Op::SliceCols {
                a: ai,
                start,
                width,
            },
        ))
    }

    /// Row lookup: result row i is `table` row `ids[i]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let ti = self.check(table, "gather")?;
        let tt = self.tensor(ti);
        if !tt.is_matrix() {
            return Err(Error::shape("gather", "table must be rank-2"));
        }
        if ids.is_empty() {
            return Err(Error::shape("gather", "empty id list"));
        }
        let (v, d) = (tt.rows(), tt.cols());
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Data(format!(
                "gather: id {bad} out of range for table with {v} rows"
            )));
        }
        let mut data = vec![0.0; ids.len() * d];
        for (r, &id) in ids.iter().enumerate() {
            data[r * d..(r + 1) * d].copy_from_slice(&tt.data()[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Gather {
                table: ti,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean over rows where `mask` is nonzero; result is rank-1 length d.
    pub fn masked_mean_pool(&mut self, a: NodeId, mask: &[u8]) -> Result<NodeId> {
        let ai = self.check(a, "masked_mean_pool")?;
        let ta = self.tensor(ai);
        if !ta.is_matrix() || mask.len() != ta.rows() {
            return Err(Error::shape(
                "masked_mean_pool",
                format!("{:?} with mask of length {}", ta.shape(), mask.len()),
            ));
        }
        let data = kernels::masked_mean_pool(ta.data(), ta.rows(), ta.cols(), mask)?;
        Ok(self.push(
            Tensor::vector(data),
            Op::MaskedMeanPool {
                a: ai,
                mask: mask.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let ai = self.check(a, "reshape")?;
        let ta = self.tensor(ai);
        let numel: usize = shape.iter().product();
        if numel != ta.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", ta.shape(), shape),
            ));
        }
        let data = ta.data().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape { a: ai }))
    }

    /// Sum of all entries, as a rank-1 scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let ai = self.check(a, "sum")?;
        let total: f64 = self.tensor(ai).iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum { a: ai }))
    }

    /// Mean binary cross-entropy between `probs` (numel m) and `targets`.
    pub fn bce_loss(&mut self, probs: NodeId, targets: &[f64], clamp: f64) -> Result<NodeId> {
        let pi = self.check(probs, "bce_loss")?;
        let tp = self.tensor(pi);
        if tp.numel() != targets.len() {
            return Err(Error::shape(
                "bce_loss",
                format!("{} probs vs {} targets", tp.numel(), targets.len()),
            ));
        }
        if !(0.0 < clamp && clamp < 0.5) {
            return Err(Error::Config(format!("bce clamp must be in (0, 0.5), got {clamp}")));
        }
        let loss = kernels::bce(tp.data(), targets, clamp);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLoss {
                probs: pi,
                targets: targets.to_vec(),
                clamp,
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node
    /// that influences the loss (leaves included).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let li = self.check(loss, "backward")?;
        if self.tensor(li).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.tensor(li).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[li] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn accum(grads: &mut [Option<Vec<f64>>], idx: usize, numel: usize) -> &mut Vec<f64> {
            grads[idx].get_or_insert_with(|| vec![0.0; numel])
        }
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.tensor(*a), self.tensor(*b));
                let (n, k, p) = (ta.rows(), ta.cols(), tb.cols());
                let da = kernels::matmul_nt(g, tb.data(), n, p, k);
                let db = kernels::matmul_tn(ta.data(), g, k, n, p);
                add_into(accum(grads, *a, ta.numel()), &da);
                add_into(accum(grads, *b, tb.numel()), &db);
            }
            Op::Add { a, b } => {
                add_into(accum(grads, *a, g.len()), g);
                add_into(accum(grads, *b, g.len()), g);
            }
            Op::Sub { a, b } => {
                add_into(accum(grads, *a, g.len()), g);
                let ga = accum(grads, *b, g.len());
                for (o, &x) in ga.iter_mut().zip(g) {
                    *o -= x;
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.tensor(*a), self.tensor(*b));
                {
                    let ga = accum(grads, *a, g.len());
                    for ((o, &x), &bv) in ga.iter_mut().zip(g).zip(tb.iter()) {
                        *o += x * bv;
                    }
                }
                let gb = accum(grads, *b, g.len());
                for ((o, &x), &av) in gb.iter_mut().zip(g).zip(ta.iter()) {
                    *o += x * av;
                }
            }
            Op::Scale { a, factor } => {
                let ga = accum(grads, *a, g.len());
                for (o, &x) in ga.iter_mut().zip(g) {
                    *o += x * factor;
                }
            }
            Op::AddRow { a, row } => {
                add_into(accum(grads, *a, g.len()), g);
                let cols = self.tensor(*row).numel();
                let gr = accum(grads, *row, cols);
                for chunk in g.chunks(cols) {
                    for (o, &x) in gr.iter_mut().zip(chunk) {
                        *o += x;
                    }
                }
            }
            Op::Transpose { a } => {
                let out = &self.nodes[i].value;
                let da = kernels::transpose(g, out.rows(), out.cols());
                add_into(accum(grads, *a, da.len()), &da);
            }
            Op::SoftmaxRows { a } => {
                let s = self.nodes[i].value.data();
                let cols = self.nodes[i].value.cols();
                let ga = accum(grads, *a, g.len());
                for ((g_row, s_row), o_row) in
                    g.chunks(cols).zip(s.chunks(cols)).zip(ga.chunks_mut(cols))
                {
                    let dot: f64 = g_row.iter().zip(s_row).map(|(x, y)| x * y).sum();
                    for ((o, &gv), &sv) in o_row.iter_mut().zip(g_row).zip(s_row) {
                        *o += sv * (gv - dot);
                    }
                }
            }
            Op::Sigmoid { a } => {
                let s = self.nodes[i].value.data();
                let ga = accum(grads, *a, g.len());
                for ((o, &gv), &sv) in ga.iter_mut().zip(g).zip(s) {
                    *o += gv * sv * (1.0 - sv);
                }
            }
            Op::Relu { a } => {
                let x = self.tensor(*a).data();
                let ga = accum(grads, *a, g.len());
                for ((o, &gv), &xv) in ga.iter_mut().zip(g).zip(x) {
                    if xv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::LayerNorm {
                a,
                gamma,
                beta,
                eps,
            } => {
                let ta = self.tensor(*a);
                let (rows, cols) = (ta.rows(), ta.cols());
                let x = ta.data();
                let gam = self.tensor(*gamma).data().to_vec();
                let d = cols as f64;
                let mut da = vec![0.0; rows * cols];
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for r in 0..rows {
                    let xr = &x[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mean = xr.iter().sum::<f64>() / d;
                    let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = xr.iter().map(|&v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> =
                        gr.iter().zip(&gam).map(|(&gv, &ga)| gv * ga).collect();
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                        da[r * cols + j] +=
                            inv_std / d * (d * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                add_into(accum(grads, *a, da.len()), &da);
                add_into(accum(grads, *gamma, cols), &dgamma);
                add_into(accum(grads, *beta, cols), &dbeta);
            }
            Op::ConcatCols { parts } => {
                let total = self.nodes[i].value.cols();
                let rows = self.nodes[i].value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.tensor(p).cols();
                    let gp = accum(grads, p, rows * w);
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + w];
                        for (o, &x) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { a, start, width } => {
                let ta = self.tensor(*a);
                let (rows, cols) = (ta.rows(), ta.cols());
                let ga = accum(grads, *a, rows * cols);
                for r in 0..rows {
                    let src = &g[r * width..(r + 1) * width];
                    for (o, &x) in ga[r * cols + start..r * cols + start + width]
                        .iter_mut()
                        .zip(src)
                    {
                        *o += x;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let tt = self.tensor(*table);
                let d = tt.cols();
                let gt = accum(grads, *table, tt.numel());
                for (r, &id) in ids.iter().enumerate() {
                    let src = &g[r * d..(r + 1) * d];
                    for (o, &x) in gt[id * d..(id + 1) * d].iter_mut().zip(src) {
                        *o += x;
                    }
                }
            }
            Op::MaskedMeanPool { a, mask } => {
                let ta = self.tensor(*a);
                let (rows, cols) = (ta.rows(), ta.cols());
                let count = mask.iter().filter(|&&m| m != 0).count() as f64;
                let ga = accum(grads, *a, rows * cols);
                for (r, &m) in mask.iter().enumerate() {
                    if m != 0 {
                        for (o, &x) in ga[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                            *o += x / count;
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                add_into(accum(grads, *a, g.len()), g);
            }
            Op::Sum { a } => {
                let numel = self.tensor(*a).numel();
                let ga = accum(grads, *a, numel);
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }
            Op::BceLoss {
                probs,
                targets,
                clamp,
            } => {
                let p = self.tensor(*probs).data();
                let dp = kernels::bce_grad(p, targets, *clamp);
                let gp = accum(grads, *probs, dp.len());
                for (o, &x) in gp.iter_mut().zip(&dp) {
                    *o += g[0] * x;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

/// Per-node gradients from one backward sweep.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a node, if the node influenced it.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        if id.tape != self.tape {
            return None;
        }
        self.grads.get(id.index)?.as_deref()
    }

    /// Gradient for a node known to be connected to the loss.
    pub fn wrt(&self, id: NodeId) -> Result<&[f64]> {
        self.get(id)
            .ok_or_else(|| Error::Numeric("no gradient recorded for node".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn square_gradient_at_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]));
        let s = tape.sum(a).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_nodes() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![2], vec![1.0, 2.0]));
        assert!(tape.backward(a).is_err());

        let mut other = Tape::new();
        let b = other.leaf(Tensor::scalar(1.0));
        assert!(tape.backward(b).is_err());
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn matmul_gradients_match_central_differences() {
        // random-ish 3x4 by 4x2, step 1e-5, rel err < 1e-6
        let a_data: Vec<f64> = (0..12).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.3).collect();
        let b_data: Vec<f64> = (0..8).map(|i| ((i * 5 % 11) as f64 - 5.0) * 0.4).collect();
        let params = vec![t(vec![3, 4], a_data), t(vec![4, 2], b_data)];
        let loss_fn = |ps: &[Tensor]| {
            let mut tape = Tape::new();
            let a = tape.leaf(ps[0].clone());
            let b = tape.leaf(ps[1].clone());
            let c = tape.matmul(a, b)?;
            let s = tape.sum(c)?;
            Ok(tape.value(s).data()[0])
        };
        let mut tape = Tape::new();
        let a = tape.leaf(params[0].clone());
        let b = tape.leaf(params[1].clone());
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c).unwrap();
        let grads = tape.backward(s).unwrap();
        let analytic = vec![
            grads.wrt(a).unwrap().to_vec(),
            grads.wrt(b).unwrap().to_vec(),
        ];
        let report = grad_check(loss_fn, &analytic, &params, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn matmul_dimension_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![2, 3], vec![0.0; 6]));
        let b = tape.leaf(t(vec![2, 2], vec![0.0; 4]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn add_zero_is_identity_and_scale_halves() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![2], vec![2.0, 4.0]));
        let z = tape.leaf(t(vec![2], vec![0.0, 0.0]));
        let s = tape.add(a, z).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 4.0]);
        let h = tape.scale(a, 0.5).unwrap();
        assert_eq!(tape.value(h).data(), &[1.0, 2.0]);
    }

    #[test]
    fn bias_row_gradient_is_column_sum() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let bias = tape.leaf(t(vec![2], vec![1.0, 1.0]));
        let out = tape.add_row(a, bias).unwrap();
        assert_eq!(tape.value(out).data(), &[2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        // weight the output so the upstream gradient is non-uniform
        let w = tape.leaf(t(vec![3, 2], vec![1.0, 10.0, 100.0, 1000.0, 0.5, 0.25]));
        let wo = tape.mul(out, w).unwrap();
        let s = tape.sum(wo).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(bias).unwrap(), &[101.5, 1010.25]);
    }

    #[test]
    fn transpose_involution_and_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![1, 3], vec![1.0, 2.0, 3.0]));
        let at = tape.transpose(a).unwrap();
        assert_eq!(tape.value(at).shape(), &[3, 1]);
        let att = tape.transpose(at).unwrap();
        assert_eq!(tape.value(att).data(), tape.value(a).data());
        let s = tape.sum(at).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[1.0, 1.0, 1.0]);

        let v = tape.leaf(t(vec![3], vec![0.0; 3]));
        assert!(tape.transpose(v).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let base = vec![0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = base.iter().map(|x| x + 13.75).collect();
        let a = kernels::softmax_rows(&base, 1, 4).unwrap();
        let b = kernels::softmax_rows(&shifted, 1, 4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_gradient_matches_central_differences() {
        let data = vec![0.4, -0.3, 1.1, 0.9, 0.2, -1.5];
        let params = vec![t(vec![2, 3], data)];
        let weights = t(vec![2, 3], vec![0.9, -0.2, 0.4, 1.5, 0.3, -0.7]);
        let loss_fn = {
            let weights = weights.clone();
            move |ps: &[Tensor]| {
                let mut tape = Tape::new();
                let a = tape.leaf(ps[0].clone());
                let sm = tape.softmax_rows(a)?;
                let w = tape.leaf(weights.clone());
                let prod = tape.mul(sm, w)?;
                let s = tape.sum(prod)?;
                Ok(tape.value(s).data()[0])
            }
        };
        let mut tape = Tape::new();
        let a = tape.leaf(params[0].clone());
        let sm = tape.softmax_rows(a).unwrap();
        let w = tape.leaf(weights.clone());
        let prod = tape.mul(sm, w).unwrap();
        let s = tape.sum(prod).unwrap();
        let grads = tape.backward(s).unwrap();
        let analytic = vec![grads.wrt(a).unwrap().to_vec()];
        let report = grad_check(loss_fn, &analytic, &params, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn relu_idempotent_and_gates_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![3], vec![-1.0, 0.0, 2.0]));
        let r1 = tape.relu(a).unwrap();
        let r2 = tape.relu(r1).unwrap();
        assert_eq!(tape.value(r1).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(tape.value(r1).data(), tape.value(r2).data());
        let s = tape.sum(r1).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_complement_identity() {
        for i in 0..61 {
            let x = -30.0 + i as f64;
            let s = kernels::sigmoid_scalar(x) + kernels::sigmoid_scalar(-x);
            assert!((s - 1.0).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn layer_norm_gradients_match_central_differences() {
        let params = vec![
            t(vec![2, 3], vec![1.0, 2.0, 3.5, -0.5, 0.1, 0.7]),
            t(vec![3], vec![1.1, 0.9, 1.3]),
            t(vec![3], vec![0.1, -0.2, 0.0]),
        ];
        let weights = t(vec![2, 3], vec![0.3, -0.8, 0.5, 1.2, -0.4, 0.9]);
        let run = |ps: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
            let mut tape = Tape::new();
            let a = tape.leaf(ps[0].clone());
            let gm = tape.leaf(ps[1].clone());
            let bt = tape.leaf(ps[2].clone());
            let ln = tape.layer_norm(a, gm, bt, 1e-5).unwrap();
            let w = tape.leaf(weights.clone());
            let prod = tape.mul(ln, w).unwrap();
            let s = tape.sum(prod).unwrap();
            let loss = tape.value(s).data()[0];
            let grads = tape.backward(s).unwrap();
            (
                loss,
                vec![
                    grads.wrt(a).unwrap().to_vec(),
                    grads.wrt(gm).unwrap().to_vec(),
                    grads.wrt(bt).unwrap().to_vec(),
                ],
            )
        };
        let (_, analytic) = run(&params);
        let report = grad_check(|ps| Ok(run(ps).0), &analytic, &params, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![2, 1], vec![1.0, 2.0]));
        let b = tape.leaf(t(vec![2, 1], vec![3.0, 4.0]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 2.0, 4.0]);
        let single = tape.concat_cols(&[a]).unwrap();
        assert_eq!(tape.value(single).data(), tape.value(a).data());
        let back_a = tape.slice_cols(c, 0, 1).unwrap();
        let back_b = tape.slice_cols(c, 1, 1).unwrap();
        assert_eq!(tape.value(back_a).data(), tape.value(a).data());
        assert_eq!(tape.value(back_b).data(), tape.value(b).data());

        let tall = tape.leaf(t(vec![3, 1], vec![0.0; 3]));
        assert!(tape.concat_cols(&[a, tall]).is_err());
    }

    #[test]
    fn concat_gradient_slices_back_by_block() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(vec![2, 1], vec![5.0, 6.0]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        let w = tape.leaf(t(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let prod = tape.mul(c, w).unwrap();
        let s = tape.sum(prod).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(grads.wrt(b).unwrap(), &[3.0, 6.0]);
    }

    #[test]
    fn gather_accumulates_repeated_ids() {
        let mut tape = Tape::new();
        let table = tape.leaf(t(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let picked = tape.gather(table, &[1, 1, 0]).unwrap();
        assert_eq!(tape.value(picked).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let s = tape.sum(picked).unwrap();
        let grads = tape.backward(s).unwrap();
        // row 1 used twice, row 0 once, row 2 never
        assert_eq!(grads.wrt(table).unwrap(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);

        assert!(tape.gather(table, &[3]).is_err());
    }

    #[test]
    fn masked_pool_and_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(vec![3, 2], vec![1.0, 2.0, 10.0, 20.0, 3.0, 4.0]));
        let pooled = tape.masked_mean_pool(a, &[1, 0, 1]).unwrap();
        assert_eq!(tape.value(pooled).data(), &[2.0, 3.0]);
        let s = tape.sum(pooled).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5]);
        assert!(tape.masked_mean_pool(a, &[0, 0, 0]).is_err());
    }

    #[test]
    fn bce_logit_gradient_identity() {
        // d(bce)/d(logit) == (sigmoid(z) - y) / m when no clamping bites
        let z_data = vec![0.7, -1.3, 2.1, 0.0];
        let targets = vec![1.0, 0.0, 1.0, 0.0];
        let mut tape = Tape::new();
        let z = tape.leaf(t(vec![4], z_data.clone()));
        let p = tape.sigmoid(z).unwrap();
        let loss = tape.bce_loss(p, &targets, 1e-7).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gz = grads.wrt(z).unwrap();
        for ((&g, &zv), &y) in gz.iter().zip(&z_data).zip(&targets) {
            let expect = (kernels::sigmoid_scalar(zv) - y) / 4.0;
            assert!((g - expect).abs() < 1e-10, "{g} vs {expect}");
        }
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.leaf(t(vec![2, 2], vec![0.3, -1.7, 2.9, 0.01]));
            let b = tape.leaf(t(vec![2, 2], vec![1.1, 0.2, -0.4, 0.8]));
            let c = tape.matmul(a, b).unwrap();
            let sm = tape.softmax_rows(c).unwrap();
            let s = tape.sum(sm).unwrap();
            let grads = tape.backward(s).unwrap();
            (
                tape.value(sm).data().to_vec(),
                grads.wrt(a).unwrap().to_vec(),
            )
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&v1), bits(&v2));
        assert_eq!(bits(&g1), bits(&g2));
    }
}
