use super::DenseMatrix;
use crate::error::{Error, Result};

/// A stack of `batch` equally shaped row-major matrices stored back to back.
///
/// Tape values are tensors; parameters and shared constants have
/// `batch == 1` and broadcast against batched operands.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    batch: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(batch: usize, rows: usize, cols: usize) -> Self {
        Self {
            batch,
            rows,
            cols,
            data: vec![0.0; batch * rows * cols],
        }
    }

    pub fn from_vec(batch: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * rows * cols {
            return Err(Error::Shape {
                op: "tensor",
                left: (batch * rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self {
            batch,
            rows,
            cols,
            data,
        })
    }

    /// Stacks matrices of identical shape along the batch axis.
    pub fn stack<'a, I>(mats: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a DenseMatrix>,
    {
        let mut iter = mats.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::invalid("cannot stack an empty batch"))?;
        let (rows, cols) = first.shape();
        let mut data = first.as_slice().to_vec();
        let mut batch = 1;
        for m in iter {
            if m.shape() != (rows, cols) {
                return Err(Error::Shape {
                    op: "stack",
                    left: (rows, cols),
                    right: m.shape(),
                });
            }
            data.extend_from_slice(m.as_slice());
            batch += 1;
        }
        Ok(Self {
            batch,
            rows,
            cols,
            data,
        })
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn mat_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn block_len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Block `b`, or block 0 when this tensor broadcasts (`batch == 1`).
    #[inline]
    pub fn block(&self, b: usize) -> &[f64] {
        let b = if self.batch == 1 { 0 } else { b };
        let n = self.block_len();
        &self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn block_mut(&mut self, b: usize) -> &mut [f64] {
        let b = if self.batch == 1 { 0 } else { b };
        let n = self.block_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn matrix(&self, b: usize) -> DenseMatrix {
        DenseMatrix::from_vec(self.rows, self.cols, self.block(b).to_vec())
            .expect("block length matches shape")
    }

    /// Scalar value of a `1 x 1 x 1` tensor.
    pub fn scalar(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl From<DenseMatrix> for Tensor {
    fn from(m: DenseMatrix) -> Self {
        let (rows, cols) = m.shape();
        Self {
            batch: 1,
            rows,
            cols,
            data: m.into_vec(),
        }
    }
}

impl From<&DenseMatrix> for Tensor {
    fn from(m: &DenseMatrix) -> Self {
        Self {
            batch: 1,
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }
}

/// Compressed sparse row matrix used for constant graph operators.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut row_ptr = Vec::with_capacity(m.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: m.rows(),
            cols: m.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Each row divided by its sum; empty rows stay empty.
    pub fn row_normalized(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let sum: f64 = self.values[span.clone()].iter().sum();
            if sum.abs() >= super::kernels::NORM_EPS {
                out.values[span].iter_mut().for_each(|v| *v /= sum);
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m.set(r, self.col_idx[k], self.values[k]);
            }
        }
        m
    }

    /// `out += self * x` where `x` is `cols x d` and `out` is `rows x d`.
    pub(crate) fn mul_acc(&self, x: &[f64], d: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let o = &mut out[r * d..(r + 1) * d];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                let xr = &x[self.col_idx[k] * d..(self.col_idx[k] + 1) * d];
                for (a, b) in o.iter_mut().zip(xr) {
                    *a += v * b;
                }
            }
        }
    }

    /// `out += self^T * g` where `g` is `rows x d` and `out` is `cols x d`.
    pub(crate) fn tmul_acc(&self, g: &[f64], d: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let gr = &g[r * d..(r + 1) * d];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                let c = self.col_idx[k];
                let o = &mut out[c * d..(c + 1) * d];
                for (a, b) in o.iter_mut().zip(gr) {
                    *a += v * b;
                }
            }
        }
    }
}
