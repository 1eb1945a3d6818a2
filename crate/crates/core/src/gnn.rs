//! GraphSage (mean aggregator) and DIFFPOOL layers.
//!
//! Layers only hold [`ParamId`]s into a [`ParamSet`]; the same layer can
//! be evaluated on a [`Tape`] (batched, differentiable) or directly on
//! dense matrices.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, ParamId, ParamSet, SparseMatrix, Tape, Var, NORM_EPS};

/// Graph operator fed to a layer on the tape.
#[derive(Clone, Copy)]
pub enum Adjacency<'a> {
    /// Fixed input graph: binary adjacency and its row-normalised form.
    Fixed {
        binary: &'a Arc<SparseMatrix>,
        mean: &'a Arc<SparseMatrix>,
    },
    /// Adjacency computed on the tape (a coarsened graph).
    Learned(Var),
}

impl Adjacency<'_> {
    fn mean_aggregate(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match *self {
            Adjacency::Fixed { mean, .. } => tape.sparse_mul(mean, x),
            Adjacency::Learned(a) => tape.mean_aggregate(a, x),
        }
    }

    /// `A * x` with the unnormalised adjacency.
    fn multiply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match *self {
            Adjacency::Fixed { binary, .. } => tape.sparse_mul(binary, x),
            Adjacency::Learned(a) => tape.matmul(a, x),
        }
    }
}

/// `ReLU(W [x_i ; mean_{j in N(i)} x_j])` with `W` of shape
/// `output_dim x 2 input_dim` and no bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphSageLayer {
    pub weight: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl GraphSageLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = params.add_uniform(
            format!("{name}.weight"),
            output_dim,
            2 * input_dim,
            2 * input_dim,
            rng,
        );
        Self {
            weight,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        adj: Adjacency<'_>,
        x: Var,
    ) -> Result<Var> {
        let neigh = adj.mean_aggregate(tape, x)?;
        let joined = tape.concat_cols(&[x, neigh])?;
        let pre = tape.matmul_t(joined, false, vars[self.weight.index()], true)?;
        Ok(tape.relu(pre))
    }

    /// Same computation on plain matrices.
    pub fn forward_dense(
        &self,
        params: &ParamSet,
        adj: &DenseMatrix,
        x: &DenseMatrix,
    ) -> Result<DenseMatrix> {
        if adj.rows() != adj.cols() || adj.cols() != x.rows() {
            return Err(Error::Shape {
                op: "graphsage",
                left: adj.shape(),
                right: x.shape(),
            });
        }
        let neigh = neighbourhood_mean(adj, x)?;
        let joined = x.row_concat(&neigh)?;
        Ok(joined.matmul(&params.get(self.weight).transpose())?.relu())
    }
}

/// Row `i` is the adjacency-weighted mean of the rows of `x` selected by
/// row `i` of `adj`; zero when that row is empty.
pub fn neighbourhood_mean(adj: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = adj.matmul(x)?;
    for r in 0..adj.rows() {
        let s: f64 = adj.row(r).iter().sum();
        let row = out.row_mut(r);
        if s.abs() < NORM_EPS {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok(out)
}

/// Differentiable pooling into `clusters` soft clusters: an embedding
/// GraphSage and an assignment GraphSage whose rows are softmax-normalised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffPoolLayer {
    pub embed: GraphSageLayer,
    pub pool: GraphSageLayer,
    pub clusters: usize,
}

/// Tape handles produced by [`DiffPoolLayer::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    pub adjacency: Var,
    pub embeddings: Var,
    pub assignment: Var,
}

/// Dense result of [`DiffPoolLayer::forward_dense`].
#[derive(Clone, Debug, PartialEq)]
pub struct PooledDense {
    pub adjacency: DenseMatrix,
    pub embeddings: DenseMatrix,
    pub assignment: DenseMatrix,
}

impl DiffPoolLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        embed_dim: usize,
        clusters: usize,
        rng: &mut R,
    ) -> Self {
        let embed =
            GraphSageLayer::new(params, &format!("{name}.embed"), input_dim, embed_dim, rng);
        let pool = GraphSageLayer::new(params, &format!("{name}.pool"), input_dim, clusters, rng);
        Self {
            embed,
            pool,
            clusters,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        adj: Adjacency<'_>,
        x: Var,
    ) -> Result<Pooled> {
        let y = self.embed.forward(tape, vars, adj, x)?;
        let raw = self.pool.forward(tape, vars, adj, x)?;
        let s = tape.row_softmax(raw);
        let embeddings = tape.matmul_t(s, true, y, false)?;
        let a_s = adj.multiply(tape, s)?;
        let adjacency = tape.matmul_t(s, true, a_s, false)?;
        Ok(Pooled {
            adjacency,
            embeddings,
            assignment: s,
        })
    }

    pub fn forward_dense(
        &self,
        params: &ParamSet,
        adj: &DenseMatrix,
        x: &DenseMatrix,
    ) -> Result<PooledDense> {
        let y = self.embed.forward_dense(params, adj, x)?;
        let assignment = self.pool.forward_dense(params, adj, x)?.row_softmax();
        let (adjacency, embeddings) = coarsen(adj, &y, &assignment)?;
        Ok(PooledDense {
            adjacency,
            embeddings,
            assignment,
        })
    }
}

/// Applies an assignment `s` (`n x k`): returns `(s^T adj s, s^T y)`.
pub fn coarsen(
    adj: &DenseMatrix,
    y: &DenseMatrix,
    s: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let st = s.transpose();
    let a = st.matmul(adj)?.matmul(s)?;
    let x = st.matmul(y)?;
    Ok((a, x))
}
