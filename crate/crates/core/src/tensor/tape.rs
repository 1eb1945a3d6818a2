//! Reverse-mode automatic differentiation over batched dense matrices.
//!
//! A [`Tape`] records every operation as it is evaluated. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! returns the gradient of that scalar with respect to every node that
//! depends on a parameter leaf.

use std::sync::Arc;

use super::kernels::{self, NORM_EPS};
use super::{DenseMatrix, SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    SpMul {
        m: Arc<SparseMatrix>,
        x: Var,
    },
    MeanAggregate {
        adj: Var,
        x: Var,
        row_sums: Vec<f64>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
    Relu {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    RowSoftmax {
        x: Var,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<Option<f64>>,
    },
    Mean {
        x: Var,
    },
    MseToConst {
        x: Var,
        target: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a `batch == 1` node as a matrix; zero when the loss does
    /// not depend on it.
    pub fn matrix(&self, v: Var, rows: usize, cols: usize) -> DenseMatrix {
        match self.get(v) {
            Some(g) => g.matrix(0),
            None => DenseMatrix::zeros(rows, cols),
        }
    }
}

fn batch_of(op: &'static str, a: &Tensor, b: &Tensor) -> Result<usize> {
    match (a.batch(), b.batch()) {
        (x, y) if x == y => Ok(x),
        (1, y) => Ok(y),
        (x, 1) => Ok(x),
        (x, y) => Err(Error::Shape {
            op,
            left: (x, a.rows()),
            right: (y, b.rows()),
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, m: &DenseMatrix) -> Var {
        self.push(Tensor::from(m), Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf tensor that does receive a gradient (used to differentiate
    /// with respect to inputs such as actions).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// `op(a) * op(b)` per batch element, where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = if ta {
            (av.cols(), av.rows())
        } else {
            av.mat_shape()
        };
        let (k2, n) = if tb {
            (bv.cols(), bv.rows())
        } else {
            bv.mat_shape()
        };
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: (m, k),
                right: (k2, n),
            });
        }
        let batch = batch_of("matmul", av, bv)?;
        let mut out = Tensor::zeros(batch, m, n);
        if av.batch() == batch && bv.batch() == 1 && !ta {
            // Fold the batch into the row dimension.
            kernels::gemm(
                1.0,
                av.as_slice(),
                (batch * av.rows(), av.cols()),
                false,
                bv.as_slice(),
                bv.mat_shape(),
                tb,
                0.0,
                out.as_mut_slice(),
            );
        } else {
            for i in 0..batch {
                kernels::gemm(
                    1.0,
                    av.block(i),
                    av.mat_shape(),
                    ta,
                    bv.block(i),
                    bv.mat_shape(),
                    tb,
                    0.0,
                    out.block_mut(i),
                );
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// Constant sparse matrix times a (batched) dense operand.
    pub fn sparse_mul(&mut self, m: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if m.cols() != xv.rows() {
            return Err(Error::Shape {
                op: "sparse_mul",
                left: (m.rows(), m.cols()),
                right: xv.mat_shape(),
            });
        }
        let d = xv.cols();
        let mut out = Tensor::zeros(xv.batch(), m.rows(), d);
        for i in 0..xv.batch() {
            m.mul_acc(xv.block(i), d, out.block_mut(i));
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::SpMul { m: m.clone(), x }, ng))
    }

    /// Row-weighted neighbourhood mean: row `i` of the result is
    /// `sum_j adj[i,j] x[j] / sum_j adj[i,j]`, or zero when the row sum is
    /// below `1e-12`.
    pub fn mean_aggregate(&mut self, adj: Var, x: Var) -> Result<Var> {
        let (av, xv) = (self.value(adj), self.value(x));
        if av.rows() != av.cols() || av.cols() != xv.rows() {
            return Err(Error::Shape {
                op: "mean_aggregate",
                left: av.mat_shape(),
                right: xv.mat_shape(),
            });
        }
        let batch = batch_of("mean_aggregate", av, xv)?;
        let (n, d) = xv.mat_shape();
        let mut out = Tensor::zeros(batch, n, d);
        let mut row_sums = vec![0.0; batch * n];
        for i in 0..batch {
            let a = av.block(i);
            let o = out.block_mut(i);
            kernels::gemm(1.0, a, (n, n), false, xv.block(i), (n, d), false, 0.0, o);
            for r in 0..n {
                let s: f64 = a[r * n..(r + 1) * n].iter().sum();
                row_sums[i * n + r] = s;
                let orow = &mut o[r * d..(r + 1) * d];
                if s.abs() < NORM_EPS {
                    orow.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    orow.iter_mut().for_each(|v| *v /= s);
                }
            }
        }
        let ng = self.needs(adj) || self.needs(x);
        Ok(self.push(out, Op::MeanAggregate { adj, x, row_sums }, ng))
    }

    /// Horizontal concatenation; all parts share batch and row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let (batch, rows) = (first.batch(), first.rows());
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.batch() != batch || v.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: (batch, rows),
                    right: (v.batch(), v.rows()),
                });
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(batch, rows, cols);
        for i in 0..batch {
            for r in 0..rows {
                let mut off = 0;
                for &p in parts {
                    let v = self.value(p);
                    let c = v.cols();
                    let src = &v.block(i)[r * c..(r + 1) * c];
                    out.block_mut(i)[r * cols + off..r * cols + off + c].copy_from_slice(src);
                    off += c;
                }
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    /// Adds a `1 x cols` bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.batch() != 1 || bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape {
                op: "add_bias",
                left: xv.mat_shape(),
                right: bv.mat_shape(),
            });
        }
        let mut out = xv.clone();
        let c = xv.cols();
        let b = bv.as_slice();
        for row in out.as_mut_slice().chunks_mut(c.max(1)) {
            for (o, v) in row.iter_mut().zip(b) {
                *o += v;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddBias { x, bias }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.mat_shape() != bv.mat_shape() {
            return Err(Error::Shape {
                op: "add",
                left: av.mat_shape(),
                right: bv.mat_shape(),
            });
        }
        let batch = batch_of("add", av, bv)?;
        let (r, c) = av.mat_shape();
        let mut out = Tensor::zeros(batch, r, c);
        for i in 0..batch {
            let (x, y) = (av.block(i), bv.block(i));
            for ((o, p), q) in out.block_mut(i).iter_mut().zip(x).zip(y) {
                *o = p + q;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        let ng = self.needs(x);
        self.push(out, Op::Scale { x, s }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let ng = self.needs(x);
        self.push(out, Op::Relu { x }, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        let ng = self.needs(x);
        self.push(out, Op::Tanh { x }, ng)
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let c = out.cols().max(1);
        out.as_mut_slice().chunks_mut(c).for_each(kernels::softmax);
        let ng = self.needs(x);
        self.push(out, Op::RowSoftmax { x }, ng)
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let c = out.cols().max(1);
        let norms = out
            .as_mut_slice()
            .chunks_mut(c)
            .map(kernels::l2_normalize)
            .collect();
        let ng = self.needs(x);
        self.push(out, Op::L2NormalizeRows { x, norms }, ng)
    }

    /// Mean of every entry, a scalar node.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.as_slice().len().max(1);
        let m = v.as_slice().iter().sum::<f64>() / n as f64;
        let ng = self.needs(x);
        self.push(
            Tensor::from(DenseMatrix::row_vector(&[m])),
            Op::Mean { x },
            ng,
        )
    }

    /// Mean squared difference between every entry of `x` and `target`.
    pub fn mse_to_const(&mut self, x: Var, target: &[f64]) -> Result<Var> {
        let v = self.value(x);
        if v.as_slice().len() != target.len() {
            return Err(Error::Shape {
                op: "mse_to_const",
                left: (v.as_slice().len(), 1),
                right: (target.len(), 1),
            });
        }
        let n = target.len().max(1) as f64;
        let m = v
            .as_slice()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::from(DenseMatrix::row_vector(&[m])),
            Op::MseToConst {
                x,
                target: target.to_vec(),
            },
            ng,
        ))
    }

    /// Which ReLU inputs are positive, in recording order. Two tapes built
    /// the same way share a pattern unless an input crossed zero.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { x } => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).as_slice().iter().map(|v| *v > 0.0))
            .collect()
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.scalar().is_none() {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                left: (lv.batch() * lv.rows(), lv.cols()),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::from(DenseMatrix::row_vector(&[1.0])));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        let val = &self.nodes[v.0].value;
        grads[v.0].get_or_insert_with(|| Tensor::zeros(val.batch(), val.rows(), val.cols()))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let (av, bv) = (self.value(a), self.value(b));
                let batch = g.batch();
                let (gr, gc) = g.mat_shape();
                let folded = av.batch() == batch && bv.batch() == 1 && !ta;
                if self.needs(a) {
                    let da = self.grad_slot(grads, a);
                    if folded {
                        // dA = dC * op(B)^T
                        kernels::gemm(
                            1.0,
                            g.as_slice(),
                            (batch * gr, gc),
                            false,
                            bv.as_slice(),
                            bv.mat_shape(),
                            !tb,
                            1.0,
                            da.as_mut_slice(),
                        );
                    } else {
                        for i in 0..batch {
                            if ta {
                                // A^T stored: dA = op(B) * dC^T
                                kernels::gemm(
                                    1.0,
                                    bv.block(i),
                                    bv.mat_shape(),
                                    tb,
                                    g.block(i),
                                    (gr, gc),
                                    true,
                                    1.0,
                                    da.block_mut(i),
                                );
                            } else {
                                kernels::gemm(
                                    1.0,
                                    g.block(i),
                                    (gr, gc),
                                    false,
                                    bv.block(i),
                                    bv.mat_shape(),
                                    !tb,
                                    1.0,
                                    da.block_mut(i),
                                );
                            }
                        }
                    }
                }
                if self.needs(b) {
                    let db = self.grad_slot(grads, b);
                    if folded {
                        if tb {
                            // dB = dC^T * A
                            kernels::gemm(
                                1.0,
                                g.as_slice(),
                                (batch * gr, gc),
                                true,
                                av.as_slice(),
                                (batch * av.rows(), av.cols()),
                                false,
                                1.0,
                                db.as_mut_slice(),
                            );
                        } else {
                            kernels::gemm(
                                1.0,
                                av.as_slice(),
                                (batch * av.rows(), av.cols()),
                                true,
                                g.as_slice(),
                                (batch * gr, gc),
                                false,
                                1.0,
                                db.as_mut_slice(),
                            );
                        }
                    } else {
                        for i in 0..batch {
                            if tb {
                                kernels::gemm(
                                    1.0,
                                    g.block(i),
                                    (gr, gc),
                                    true,
                                    av.block(i),
                                    av.mat_shape(),
                                    ta,
                                    1.0,
                                    db.block_mut(i),
                                );
                            } else {
                                kernels::gemm(
                                    1.0,
                                    av.block(i),
                                    av.mat_shape(),
                                    !ta,
                                    g.block(i),
                                    (gr, gc),
                                    false,
                                    1.0,
                                    db.block_mut(i),
                                );
                            }
                        }
                    }
                }
            }
            Op::SpMul { m, x } => {
                if self.needs(*x) {
                    let d = g.cols();
                    let dx = self.grad_slot(grads, *x);
                    for i in 0..g.batch() {
                        m.tmul_acc(g.block(i), d, dx.block_mut(i));
                    }
                }
            }
            Op::MeanAggregate { adj, x, row_sums } => {
                let (adj, x) = (*adj, *x);
                let (av, xv) = (self.value(adj), self.value(x));
                let out = &node.value;
                let (n, d) = xv.mat_shape();
                let batch = g.batch();
                // Rows of dC scaled by 1/rowsum, zero where guarded.
                let mut scaled = g.clone();
                for i in 0..batch {
                    let blk = scaled.block_mut(i);
                    for r in 0..n {
                        let s = row_sums[i * n + r];
                        let row = &mut blk[r * d..(r + 1) * d];
                        if s.abs() < NORM_EPS {
                            row.iter_mut().for_each(|v| *v = 0.0);
                        } else {
                            row.iter_mut().for_each(|v| *v /= s);
                        }
                    }
                }
                if self.needs(x) {
                    let dx = self.grad_slot(grads, x);
                    for i in 0..batch {
                        kernels::gemm(
                            1.0,
                            av.block(i),
                            (n, n),
                            true,
                            scaled.block(i),
                            (n, d),
                            false,
                            1.0,
                            dx.block_mut(i),
                        );
                    }
                }
                if self.needs(adj) {
                    let da = self.grad_slot(grads, adj);
                    for i in 0..batch {
                        let sb = scaled.block(i);
                        let ob = out.block(i);
                        let dab = da.block_mut(i);
                        // dA_ij += s_i . x_j - s_i . out_i
                        kernels::gemm(1.0, sb, (n, d), false, xv.block(i), (n, d), true, 1.0, dab);
                        for r in 0..n {
                            let dot: f64 = sb[r * d..(r + 1) * d]
                                .iter()
                                .zip(&ob[r * d..(r + 1) * d])
                                .map(|(p, q)| p * q)
                                .sum();
                            dab[r * n..(r + 1) * n].iter_mut().for_each(|v| *v -= dot);
                        }
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let cols = g.cols();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.needs(p) {
                        let dp = self.grad_slot(grads, p);
                        for i in 0..g.batch() {
                            let gb = g.block(i);
                            let db = dp.block_mut(i);
                            for r in 0..g.rows() {
                                for (o, v) in db[r * c..(r + 1) * c]
                                    .iter_mut()
                                    .zip(&gb[r * cols + off..r * cols + off + c])
                                {
                                    *o += v;
                                }
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::AddBias { x, bias } => {
                if self.needs(*x) {
                    self.grad_slot(grads, *x).add_assign(g);
                }
                if self.needs(*bias) {
                    let c = g.cols();
                    let db = self.grad_slot(grads, *bias);
                    for row in g.as_slice().chunks(c.max(1)) {
                        for (o, v) in db.as_mut_slice().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for &v in &[*a, *b] {
                    if self.needs(v) {
                        let dv = self.grad_slot(grads, v);
                        for i in 0..g.batch() {
                            for (o, q) in dv.block_mut(i).iter_mut().zip(g.block(i)) {
                                *o += q;
                            }
                        }
                    }
                }
            }
            Op::Scale { x, s } => {
                if self.needs(*x) {
                    let dx = self.grad_slot(grads, *x);
                    for (o, v) in dx.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o += s * v;
                    }
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let y = node.value.as_slice();
                    let dx = self.grad_slot(grads, *x);
                    for ((o, v), y) in dx.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y) {
                        if *y > 0.0 {
                            *o += v;
                        }
                    }
                }
            }
            Op::Tanh { x } => {
                if self.needs(*x) {
                    let y = node.value.as_slice();
                    let dx = self.grad_slot(grads, *x);
                    for ((o, v), y) in dx.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y) {
                        *o += v * (1.0 - y * y);
                    }
                }
            }
            Op::RowSoftmax { x } => {
                if self.needs(*x) {
                    let c = g.cols().max(1);
                    let y = node.value.as_slice();
                    let dx = self.grad_slot(grads, *x);
                    for ((o, gr), yr) in dx
                        .as_mut_slice()
                        .chunks_mut(c)
                        .zip(g.as_slice().chunks(c))
                        .zip(y.chunks(c))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in o.iter_mut().zip(gr).zip(yr) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                if self.needs(*x) {
                    let c = g.cols().max(1);
                    let y = node.value.as_slice();
                    let dx = self.grad_slot(grads, *x);
                    for (((o, gr), yr), norm) in dx
                        .as_mut_slice()
                        .chunks_mut(c)
                        .zip(g.as_slice().chunks(c))
                        .zip(y.chunks(c))
                        .zip(norms)
                    {
                        match norm {
                            Some(s) => {
                                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                                for ((o, gv), yv) in o.iter_mut().zip(gr).zip(yr) {
                                    *o += (gv - yv * dot) / s;
                                }
                            }
                            None => {
                                for (o, gv) in o.iter_mut().zip(gr) {
                                    *o += gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Mean { x } => {
                if self.needs(*x) {
                    let upstream = g.as_slice()[0];
                    let dx = self.grad_slot(grads, *x);
                    let n = dx.as_slice().len().max(1) as f64;
                    dx.as_mut_slice()
                        .iter_mut()
                        .for_each(|v| *v += upstream / n);
                }
            }
            Op::MseToConst { x, target } => {
                if self.needs(*x) {
                    let upstream = g.as_slice()[0];
                    let xv = self.value(*x).as_slice().to_vec();
                    let n = target.len().max(1) as f64;
                    let dx = self.grad_slot(grads, *x);
                    for ((o, a), t) in dx.as_mut_slice().iter_mut().zip(&xv).zip(target) {
                        *o += upstream * 2.0 * (a - t) / n;
                    }
                }
            }
        }
    }
}
