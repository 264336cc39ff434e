use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::TensorError;

/// Row-major sparse matrix used for graph propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(entries.len(), rows);
        debug_assert!(entries.iter().flatten().all(|&(c, _)| c < cols));
        Self { rows, cols, entries }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.entries[r]
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for (r, row) in self.entries.iter().enumerate() {
            for &(c, v) in row {
                t.set(r, c, t.get(r, c) + v);
            }
        }
        t
    }

    fn apply(&self, h: &Tensor) -> Tensor {
        let d = h.cols();
        let mut out = vec![0.0; self.rows * d];
        for (r, row) in self.entries.iter().enumerate() {
            let orow = &mut out[r * d..(r + 1) * d];
            for &(c, w) in row {
                for (o, v) in orow.iter_mut().zip(h.row_slice(c)) {
                    *o += w * v;
                }
            }
        }
        Tensor::new(self.rows, d, out)
    }

    fn apply_transposed(&self, g: &Tensor) -> Tensor {
        let d = g.cols();
        let mut out = vec![0.0; self.cols * d];
        for (r, row) in self.entries.iter().enumerate() {
            let grow = g.row_slice(r);
            for &(c, w) in row {
                for (o, v) in out[c * d..(c + 1) * d].iter_mut().zip(grow) {
                    *o += w * v;
                }
            }
        }
        Tensor::new(self.cols, d, out)
    }
}

/// Row ranges of consecutive groups: group `g` spans rows
/// `offsets[g]..offsets[g + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    offsets: Vec<usize>,
}

impl Groups {
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Self { offsets }
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Silu(usize),
    Recip(usize),
    SoftmaxRows(usize),
    MeanRows(usize),
    MeanCols(usize),
    Sum(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Transpose(usize),
    BatchNormTrain {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Solve2(usize, usize),
    CrossEntropy(usize, usize),
    SquaredError(usize, usize),
    Propagate(Rc<SparseMatrix>, usize),
    GroupMean(usize, Rc<Groups>),
    GroupBroadcast(usize, Rc<Groups>),
    Diag(usize),
    Clamp(usize, f64, f64),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run record of tensor operations for reverse-mode
/// differentiation. One tape per thread; rebuild it for every step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of a scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros if the loss did not depend on it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let [r, c] = v.shape();
            Tensor::zeros(r, c)
        })
    }
}

fn mismatch(op: &'static str, a: [usize; 2], b: [usize; 2]) -> TensorError {
    TensorError::ShapeMismatch { op, left: a, right: b }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
            *o += v;
        }
    }
    Tensor::new(1, t.cols(), out)
}

fn broadcast_rows(t: &Tensor, row: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = t.cols();
    let data = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| f(v, row.data()[i % cols]))
        .collect();
    Tensor::new(t.rows(), cols, data)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = vals[0].rows();
        if let Some(bad) = vals.iter().find(|v| v.rows() != rows) {
            return Err(mismatch("concat_cols", vals[0].shape(), bad.shape()));
        }
        let cols: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let ng = self.needs(&ids);
        Ok(self.push(Tensor::new(rows, cols, data), Op::ConcatCols(ids), ng))
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let cols = vals[0].cols();
        if let Some(bad) = vals.iter().find(|v| v.cols() != cols) {
            return Err(mismatch("concat_rows", vals[0].shape(), bad.shape()));
        }
        let rows: usize = vals.iter().map(|v| v.rows()).sum();
        let data: Vec<f64> = vals.iter().flat_map(|v| v.data().iter().copied()).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let ng = self.needs(&ids);
        Ok(self.push(Tensor::new(rows, cols, data), Op::ConcatRows(ids), ng))
    }

    /// `adj · h` for a constant sparse `adj`.
    pub fn propagate<'t>(&'t self, adj: &Rc<SparseMatrix>, h: Var<'t>) -> Result<Var<'t>, TensorError> {
        let hv = h.value();
        if adj.cols != hv.rows() {
            return Err(mismatch("propagate", adj.shape(), hv.shape()));
        }
        let out = adj.apply(&hv);
        let ng = self.needs(&[h.id]);
        Ok(self.push(out, Op::Propagate(Rc::clone(adj), h.id), ng))
    }

    /// Batch normalization over rows using the batch statistics. Returns the
    /// output and the batch mean and (biased) variance per column.
    pub fn batch_norm_train<'t>(
        &'t self,
        x: Var<'t>,
        gamma: Var<'t>,
        beta: Var<'t>,
        eps: f64,
    ) -> Result<(Var<'t>, Vec<f64>, Vec<f64>), TensorError> {
        let xv = x.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let [m, d] = xv.shape();
        if gv.shape() != [1, d] || bv.shape() != [1, d] {
            return Err(mismatch("batch_norm", xv.shape(), gv.shape()));
        }
        let mut mean = vec![0.0; d];
        for r in 0..m {
            for (acc, v) in mean.iter_mut().zip(xv.row_slice(r)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; d];
        for r in 0..m {
            for ((acc, v), mu) in var.iter_mut().zip(xv.row_slice(r)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(m, d);
        let mut y = Tensor::zeros(m, d);
        for r in 0..m {
            for c in 0..d {
                let h = (xv.get(r, c) - mean[c]) * inv_std[c];
                xhat.set(r, c, h);
                y.set(r, c, gv.data()[c] * h + bv.data()[c]);
            }
        }
        let ng = self.needs(&[x.id, gamma.id, beta.id]);
        let out = self.push(
            y,
            Op::BatchNormTrain {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            ng,
        );
        Ok((out, mean, var))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval<'t>(
        &'t self,
        x: Var<'t>,
        gamma: Var<'t>,
        beta: Var<'t>,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var<'t>, TensorError> {
        let xv = x.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let [m, d] = xv.shape();
        if gv.shape() != [1, d] || bv.shape() != [1, d] || mean.len() != d || var.len() != d {
            return Err(mismatch("batch_norm", xv.shape(), gv.shape()));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut y = Tensor::zeros(m, d);
        for r in 0..m {
            for c in 0..d {
                y.set(
                    r,
                    c,
                    gv.data()[c] * (xv.get(r, c) - mean[c]) * inv_std[c] + bv.data()[c],
                );
            }
        }
        let ng = self.needs(&[x.id, gamma.id, beta.id]);
        Ok(self.push(
            y,
            Op::BatchNormEval {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                mean: mean.to_vec(),
                inv_std,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape();
        if shape != [1, 1] {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            let mut acc = |i: usize, t: Tensor| {
                if !nodes[i].needs_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_t(val(*b)));
                    acc(*b, val(*a).t_matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::AddRow(a, b) => {
                    acc(*b, column_sums(&g));
                    acc(*a, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*b, g.scaled(-1.0));
                    acc(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y));
                    acc(*b, g.zip_map(val(*a), |x, y| x * y));
                }
                Op::MulRow(a, b) => {
                    acc(*a, broadcast_rows(&g, val(*b), |x, y| x * y));
                    acc(*b, column_sums(&g.zip_map(val(*a), |x, y| x * y)));
                }
                Op::Scale(a, c) => acc(*a, g.scaled(*c)),
                Op::ScaleBy(a, s) => {
                    let sv = val(*s).item();
                    let dot: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                    acc(*s, Tensor::scalar(dot));
                    acc(*a, g.scaled(sv));
                }
                Op::AddScalar(a) => acc(*a, g.clone()),
                Op::Exp(a) => acc(*a, g.zip_map(y, |g, y| g * y)),
                Op::Log(a) => acc(*a, g.zip_map(val(*a), |g, x| g / x)),
                Op::Tanh(a) => acc(*a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
                Op::Sigmoid(a) => acc(*a, g.zip_map(y, |g, y| g * y * (1.0 - y))),
                Op::Silu(a) => acc(
                    *a,
                    g.zip_map(val(*a), |g, x| {
                        let s = sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    }),
                ),
                Op::Recip(a) => acc(*a, g.zip_map(y, |g, y| -g * y * y)),
                Op::SoftmaxRows(a) => {
                    let mut out = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            out.set(r, c, yr[c] * (gr[c] - dot));
                        }
                    }
                    acc(*a, out);
                }
                Op::MeanRows(a) => {
                    let m = val(*a).rows();
                    let row = g.scaled(1.0 / m as f64);
                    acc(*a, broadcast_rows(&Tensor::zeros(m, row.cols()), &row, |_, r| r));
                }
                Op::MeanCols(a) => {
                    let [m, n] = val(*a).shape();
                    let data = (0..m * n).map(|i| g.data()[i / n] / n as f64).collect();
                    acc(*a, Tensor::new(m, n, data));
                }
                Op::Sum(a) => {
                    let [m, n] = val(*a).shape();
                    acc(*a, Tensor::filled(m, n, g.item()));
                }
                Op::ConcatCols(ids) => {
                    let mut offset = 0;
                    for &i in ids {
                        let w = val(i).cols();
                        let mut part = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            for c in 0..w {
                                part.set(r, c, g.get(r, offset + c));
                            }
                        }
                        offset += w;
                        acc(i, part);
                    }
                }
                Op::ConcatRows(ids) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &i in ids {
                        let h = val(i).rows();
                        let part = Tensor::new(h, cols, g.data()[offset * cols..(offset + h) * cols].to_vec());
                        offset += h;
                        acc(i, part);
                    }
                }
                Op::SliceRows(a, start) => {
                    let [m, n] = val(*a).shape();
                    let mut out = Tensor::zeros(m, n);
                    out.data_mut()[start * n..(start + g.rows()) * n].copy_from_slice(g.data());
                    acc(*a, out);
                }
                Op::SliceCols(a, start) => {
                    let [m, n] = val(*a).shape();
                    let mut out = Tensor::zeros(m, n);
                    for r in 0..m {
                        for c in 0..g.cols() {
                            out.set(r, start + c, g.get(r, c));
                        }
                    }
                    acc(*a, out);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let [m, d] = xhat.shape();
                    let gv = val(*gamma);
                    let gsum = column_sums(&g);
                    let gxhat_sum = column_sums(&g.zip_map(xhat, |a, b| a * b));
                    let mut gx = Tensor::zeros(m, d);
                    let mf = m as f64;
                    for r in 0..m {
                        for c in 0..d {
                            let v = gv.data()[c] * inv_std[c] / mf
                                * (mf * g.get(r, c) - gsum.data()[c] - xhat.get(r, c) * gxhat_sum.data()[c]);
                            gx.set(r, c, v);
                        }
                    }
                    acc(*x, gx);
                    acc(*gamma, gxhat_sum);
                    acc(*beta, gsum);
                }
                Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let xv = val(*x);
                    let gv = val(*gamma);
                    let [m, d] = xv.shape();
                    let mut gx = Tensor::zeros(m, d);
                    let mut gg = Tensor::zeros(1, d);
                    for r in 0..m {
                        for c in 0..d {
                            gx.set(r, c, g.get(r, c) * gv.data()[c] * inv_std[c]);
                            gg.data_mut()[c] += g.get(r, c) * (xv.get(r, c) - mean[c]) * inv_std[c];
                        }
                    }
                    acc(*x, gx);
                    acc(*gamma, gg);
                    acc(*beta, column_sums(&g));
                }
                Op::Solve2(a, b) => {
                    let inv_t = inverse2(val(*a)).expect("checked in forward").transpose();
                    let gb = inv_t.matmul(&g).expect("2x2 shapes");
                    // dA = -A⁻ᵀ G Xᵀ
                    acc(*a, gb.matmul_t(y).scaled(-1.0));
                    acc(*b, gb);
                }
                Op::CrossEntropy(p, index) => {
                    let pv = val(*p);
                    let mut out = Tensor::zeros(pv.rows(), pv.cols());
                    out.data_mut()[*index] = -g.item() / pv.data()[*index];
                    acc(*p, out);
                }
                Op::SquaredError(a, b) => {
                    let diff = val(*a).zip_map(val(*b), |x, y| x - y);
                    let s = 2.0 * g.item();
                    acc(*b, diff.scaled(-s));
                    acc(*a, diff.scaled(s));
                }
                Op::Propagate(adj, h) => acc(*h, adj.apply_transposed(&g)),
                Op::GroupMean(x, groups) => {
                    let [m, d] = val(*x).shape();
                    let mut out = Tensor::zeros(m, d);
                    for gi in 0..groups.count() {
                        let range = groups.range(gi);
                        let n = range.len() as f64;
                        for r in range {
                            for c in 0..d {
                                out.set(r, c, g.get(gi, c) / n);
                            }
                        }
                    }
                    acc(*x, out);
                }
                Op::GroupBroadcast(x, groups) => {
                    let d = g.cols();
                    let mut out = Tensor::zeros(groups.count(), d);
                    for gi in 0..groups.count() {
                        for r in groups.range(gi) {
                            for c in 0..d {
                                out.set(gi, c, out.get(gi, c) + g.get(r, c));
                            }
                        }
                    }
                    acc(*x, out);
                }
                Op::Diag(v) => {
                    let [r, c] = val(*v).shape();
                    let n = r.max(c);
                    let data = (0..n).map(|i| g.get(i, i)).collect();
                    acc(*v, Tensor::new(r, c, data));
                }
                Op::Clamp(x, lo, hi) => {
                    acc(
                        *x,
                        g.zip_map(val(*x), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
                    );
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn inverse2(a: &Tensor) -> Option<Tensor> {
    let (p, q, r, s) = (a.get(0, 0), a.get(0, 1), a.get(1, 0), a.get(1, 1));
    let det = p * s - q * r;
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(Tensor::new(2, 2, vec![s / det, -q / det, -r / det, p / det]))
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Scalar value of a 1×1 node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, op: Op, out: Tensor) -> Var<'t> {
        let ng = self.tape.needs(&[self.id]);
        self.tape.push(out, op, ng)
    }

    fn binary(self, other: Var<'t>, op: Op, out: Tensor) -> Var<'t> {
        let ng = self.tape.needs(&[self.id, other.id]);
        self.tape.push(out, op, ng)
    }

    /// Same value, cut from the graph.
    pub fn detach(self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let out = self.value().matmul(&other.value())?;
        Ok(self.binary(other, Op::MatMul(self.id, other.id), out))
    }

    /// Elementwise sum; a `[1, n]` right operand is broadcast over rows.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (a, b) = (self.value(), other.value());
        if a.shape() == b.shape() {
            let out = a.zip_map(&b, |x, y| x + y);
            Ok(self.binary(other, Op::Add(self.id, other.id), out))
        } else if b.rows() == 1 && b.cols() == a.cols() {
            let out = broadcast_rows(&a, &b, |x, y| x + y);
            Ok(self.binary(other, Op::AddRow(self.id, other.id), out))
        } else {
            Err(mismatch("add", a.shape(), b.shape()))
        }
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch("sub", a.shape(), b.shape()));
        }
        let out = a.zip_map(&b, |x, y| x - y);
        Ok(self.binary(other, Op::Sub(self.id, other.id), out))
    }

    /// Elementwise product; a `[1, n]` right operand is broadcast over rows.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (a, b) = (self.value(), other.value());
        if a.shape() == b.shape() {
            let out = a.zip_map(&b, |x, y| x * y);
            Ok(self.binary(other, Op::Mul(self.id, other.id), out))
        } else if b.rows() == 1 && b.cols() == a.cols() {
            let out = broadcast_rows(&a, &b, |x, y| x * y);
            Ok(self.binary(other, Op::MulRow(self.id, other.id), out))
        } else {
            Err(mismatch("mul", a.shape(), b.shape()))
        }
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let out = self.value().scaled(c);
        self.unary(Op::Scale(self.id, c), out)
    }

    /// Multiplies every entry by the 1×1 node `s`.
    pub fn scale_by(self, s: Var<'t>) -> Result<Var<'t>, TensorError> {
        let sv = s.value();
        if sv.shape() != [1, 1] {
            return Err(mismatch("scale_by", self.shape(), sv.shape()));
        }
        let out = self.value().scaled(sv.item());
        Ok(self.binary(s, Op::ScaleBy(self.id, s.id), out))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let out = self.value().map(|v| v + c);
        self.unary(Op::AddScalar(self.id), out)
    }

    pub fn exp(self) -> Var<'t> {
        let out = self.value().map(f64::exp);
        self.unary(Op::Exp(self.id), out)
    }

    pub fn log(self) -> Var<'t> {
        let out = self.value().map(f64::ln);
        self.unary(Op::Log(self.id), out)
    }

    pub fn tanh(self) -> Var<'t> {
        let out = self.value().map(f64::tanh);
        self.unary(Op::Tanh(self.id), out)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = self.value().map(sigmoid);
        self.unary(Op::Sigmoid(self.id), out)
    }

    /// `x · sigmoid(x)`
    pub fn silu(self) -> Var<'t> {
        let out = self.value().map(|x| x * sigmoid(x));
        self.unary(Op::Silu(self.id), out)
    }

    pub fn recip(self) -> Var<'t> {
        let out = self.value().map(|x| 1.0 / x);
        self.unary(Op::Recip(self.id), out)
    }

    pub fn softmax_rows(self) -> Var<'t> {
        let v = self.value();
        let mut out = Tensor::zeros(v.rows(), v.cols());
        for r in 0..v.rows() {
            let row = v.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                out.set(r, c, e / total);
            }
        }
        self.unary(Op::SoftmaxRows(self.id), out)
    }

    /// Mean over rows: `[m, n] → [1, n]`.
    pub fn mean_rows(self) -> Var<'t> {
        let v = self.value();
        let out = column_sums(&v).scaled(1.0 / v.rows() as f64);
        self.unary(Op::MeanRows(self.id), out)
    }

    /// Mean over columns: `[m, n] → [m, 1]`.
    pub fn mean_cols(self) -> Var<'t> {
        let v = self.value();
        let data = (0..v.rows())
            .map(|r| v.row_slice(r).iter().sum::<f64>() / v.cols() as f64)
            .collect();
        self.unary(Op::MeanCols(self.id), Tensor::new(v.rows(), 1, data))
    }

    pub fn sum(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(Op::Sum(self.id), out)
    }

    pub fn t(self) -> Var<'t> {
        let out = self.value().transpose();
        self.unary(Op::Transpose(self.id), out)
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        if start + len > v.rows() {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                index: start + len,
                shape: v.shape(),
            });
        }
        let n = v.cols();
        let out = Tensor::new(len, n, v.data()[start * n..(start + len) * n].to_vec());
        Ok(self.unary(Op::SliceRows(self.id, start), out))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        if start + len > v.cols() {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                index: start + len,
                shape: v.shape(),
            });
        }
        let mut out = Tensor::zeros(v.rows(), len);
        for r in 0..v.rows() {
            for c in 0..len {
                out.set(r, c, v.get(r, start + c));
            }
        }
        Ok(self.unary(Op::SliceCols(self.id, start), out))
    }

    /// `A⁻¹ B` for a 2×2 `A` (self) and `B` of shape `[2, k]`.
    pub fn solve2(self, b: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (av, bv) = (self.value(), b.value());
        if av.shape() != [2, 2] || bv.rows() != 2 {
            return Err(mismatch("solve2", av.shape(), bv.shape()));
        }
        let inv = inverse2(&av).ok_or(TensorError::Singular { op: "solve2" })?;
        let out = inv.matmul(&bv)?;
        Ok(self.binary(b, Op::Solve2(self.id, b.id), out))
    }

    /// `-ln p[index]` for a probability vector (flat index).
    pub fn cross_entropy(self, index: usize) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        if index >= v.len() {
            return Err(TensorError::OutOfRange {
                op: "cross_entropy",
                index,
                shape: v.shape(),
            });
        }
        let out = Tensor::scalar(-v.data()[index].ln());
        Ok(self.unary(Op::CrossEntropy(self.id, index), out))
    }

    /// `Σ (self - other)²`.
    pub fn squared_error(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch("squared_error", a.shape(), b.shape()));
        }
        let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(self.binary(other, Op::SquaredError(self.id, other.id), Tensor::scalar(s)))
    }

    /// Per-group mean over rows: `[N, d] → [G, d]`.
    pub fn group_mean(self, groups: &Rc<Groups>) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        if groups.total() != v.rows() {
            return Err(mismatch("group_mean", v.shape(), [groups.total(), v.cols()]));
        }
        let d = v.cols();
        let mut out = Tensor::zeros(groups.count(), d);
        for g in 0..groups.count() {
            let range = groups.range(g);
            let n = range.len().max(1) as f64;
            for r in range {
                for c in 0..d {
                    out.set(g, c, out.get(g, c) + v.get(r, c) / n);
                }
            }
        }
        Ok(self.unary(Op::GroupMean(self.id, Rc::clone(groups)), out))
    }

    /// Repeats row `g` of `[G, d]` for every row of group `g`: `→ [N, d]`.
    pub fn group_broadcast(self, groups: &Rc<Groups>) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        if groups.count() != v.rows() {
            return Err(mismatch("group_broadcast", v.shape(), [groups.count(), v.cols()]));
        }
        let d = v.cols();
        let mut data = Vec::with_capacity(groups.total() * d);
        for g in 0..groups.count() {
            for _ in groups.range(g) {
                data.extend_from_slice(v.row_slice(g));
            }
        }
        let out = Tensor::new(groups.total(), d, data);
        Ok(self.unary(Op::GroupBroadcast(self.id, Rc::clone(groups)), out))
    }

    /// Diagonal matrix from a row or column vector.
    pub fn diag(self) -> Result<Var<'t>, TensorError> {
        let v = self.value();
        if v.rows() != 1 && v.cols() != 1 {
            return Err(mismatch("diag", v.shape(), [v.len(), 1]));
        }
        let n = v.len();
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            out.set(i, i, v.data()[i]);
        }
        Ok(self.unary(Op::Diag(self.id), out))
    }

    /// Elementwise clamp; gradient passes only inside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let out = self.value().map(|v| v.clamp(lo, hi));
        self.unary(Op::Clamp(self.id, lo, hi), out)
    }
}
