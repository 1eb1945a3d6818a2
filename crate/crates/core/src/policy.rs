//! Actor and critic networks over a directed social graph.
//!
//! Each network runs one encoder per adjacency direction. An encoder is
//! GraphSage -> DIFFPOOL(clusters) -> GraphSage -> DIFFPOOL(1); the pooled
//! graph embedding is multiplied against the first GraphSage's node
//! embeddings and L2-normalised to give one score per user. The scores of
//! all branches (plus the action, for a critic) feed three fully
//! connected layers.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gnn::{Adjacency, DiffPoolLayer, GraphSageLayer};
use crate::graph::AdjacencyPair;
use crate::tensor::{DenseMatrix, ParamId, ParamSet, SparseMatrix, Tape, Tensor, Var};

/// Which adjacency a branch aggregates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    fn tag(self) -> &'static str {
        match self {
            Direction::In => "in",
            Direction::Out => "out",
        }
    }
}

/// Encoder branches used by a network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Variant {
    /// Both in- and out-adjacency branches.
    #[default]
    Gac,
    GacIn,
    GacOut,
}

impl Variant {
    pub fn directions(self) -> &'static [Direction] {
        match self {
            Variant::Gac => &[Direction::In, Direction::Out],
            Variant::GacIn => &[Direction::In],
            Variant::GacOut => &[Direction::Out],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Gac => "gac",
            Variant::GacIn => "gac-in",
            Variant::GacOut => "gac-out",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gac" => Ok(Variant::Gac),
            "gac-in" => Ok(Variant::GacIn),
            "gac-out" => Ok(Variant::GacOut),
            other => Err(Error::invalid(format!(
                "unknown variant '{other}' (expected gac, gac-in or gac-out)"
            ))),
        }
    }
}

/// Layer sizes shared by the actor and the critics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Architecture {
    pub node_count: usize,
    pub feature_width: usize,
    pub embed_dim: usize,
    pub clusters: usize,
    pub hidden: usize,
    pub variant: Variant,
}

impl Architecture {
    pub const DEFAULT_EMBED_DIM: usize = 32;
    pub const DEFAULT_CLUSTERS: usize = 16;
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn new(node_count: usize, feature_width: usize, variant: Variant) -> Self {
        Self {
            node_count,
            feature_width,
            embed_dim: Self::DEFAULT_EMBED_DIM,
            clusters: Self::DEFAULT_CLUSTERS,
            hidden: Self::DEFAULT_HIDDEN,
            variant,
        }
    }

    /// Width of the concatenated per-user scores entering the head.
    pub fn score_width(&self) -> usize {
        self.variant.directions().len() * self.node_count
    }

    fn validate(&self) -> Result<()> {
        if self.node_count == 0
            || self.feature_width == 0
            || self.embed_dim == 0
            || self.clusters == 0
            || self.hidden == 0
        {
            return Err(Error::invalid(format!(
                "every layer size must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Sparse forms of the fixed adjacency pair, built once per environment.
#[derive(Clone, Debug)]
pub struct GraphInput {
    node_count: usize,
    in_binary: Arc<SparseMatrix>,
    in_mean: Arc<SparseMatrix>,
    out_binary: Arc<SparseMatrix>,
    out_mean: Arc<SparseMatrix>,
}

impl GraphInput {
    pub fn new(adjacency: &AdjacencyPair) -> Self {
        let in_binary = SparseMatrix::from_dense(&adjacency.a_in);
        let out_binary = SparseMatrix::from_dense(&adjacency.a_out);
        Self {
            node_count: adjacency.a_in.rows(),
            in_mean: Arc::new(in_binary.row_normalized()),
            out_mean: Arc::new(out_binary.row_normalized()),
            in_binary: Arc::new(in_binary),
            out_binary: Arc::new(out_binary),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn adjacency(&self, direction: Direction) -> Adjacency<'_> {
        match direction {
            Direction::In => Adjacency::Fixed {
                binary: &self.in_binary,
                mean: &self.in_mean,
            },
            Direction::Out => Adjacency::Fixed {
                binary: &self.out_binary,
                mean: &self.out_mean,
            },
        }
    }
}

/// Fully connected layer `x W^T + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: params.add_uniform(format!("{name}.weight"), output, input, input, rng),
            bias: params.add_uniform(format!("{name}.bias"), 1, output, input, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul_t(x, false, vars[self.weight.index()], true)?;
        tape.add_bias(y, vars[self.bias.index()])
    }
}

/// One graph branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Encoder {
    pub direction: Direction,
    pub first: GraphSageLayer,
    pub cluster_pool: DiffPoolLayer,
    pub second: GraphSageLayer,
    pub graph_pool: DiffPoolLayer,
}

/// Tape handles for every stage of an encoder.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// First GraphSage output, `|V| x d`.
    pub node_embeddings: Var,
    pub cluster_adjacency: Var,
    pub cluster_embeddings: Var,
    pub second_embeddings: Var,
    /// Single pooled row, `1 x d`.
    pub graph_embedding: Var,
    /// Normalised per-user scores, `1 x |V|`.
    pub scores: Var,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        direction: Direction,
        arch: &Architecture,
        rng: &mut R,
    ) -> Self {
        let tag = direction.tag();
        let d = arch.embed_dim;
        Self {
            direction,
            first: GraphSageLayer::new(params, &format!("{tag}.sage1"), arch.feature_width, d, rng),
            cluster_pool: DiffPoolLayer::new(
                params,
                &format!("{tag}.pool1"),
                d,
                d,
                arch.clusters,
                rng,
            ),
            second: GraphSageLayer::new(params, &format!("{tag}.sage2"), d, d, rng),
            graph_pool: DiffPoolLayer::new(params, &format!("{tag}.pool2"), d, d, 1, rng),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        graph: &GraphInput,
        features: Var,
    ) -> Result<EncoderOutput> {
        let adj = graph.adjacency(self.direction);
        let h = self.first.forward(tape, vars, adj, features)?;
        let level1 = self.cluster_pool.forward(tape, vars, adj, h)?;
        let coarse = Adjacency::Learned(level1.adjacency);
        let h2 = self.second.forward(tape, vars, coarse, level1.embeddings)?;
        let level2 = self.graph_pool.forward(tape, vars, coarse, h2)?;
        let scores = combine_on_tape(tape, level2.embeddings, h)?;
        Ok(EncoderOutput {
            node_embeddings: h,
            cluster_adjacency: level1.adjacency,
            cluster_embeddings: level1.embeddings,
            second_embeddings: h2,
            graph_embedding: level2.embeddings,
            scores,
        })
    }
}

fn combine_on_tape(tape: &mut Tape, graph_embedding: Var, node_embeddings: Var) -> Result<Var> {
    let raw = tape.matmul_t(graph_embedding, false, node_embeddings, true)?;
    Ok(tape.l2_normalize_rows(raw))
}

/// `l2normalize(graph_emb * node_embs^T)`: one score per node.
pub fn combine_embeddings(graph_emb: &DenseMatrix, node_embs: &DenseMatrix) -> Result<DenseMatrix> {
    if graph_emb.rows() != 1 || graph_emb.cols() != node_embs.cols() {
        return Err(Error::Shape {
            op: "combine_embeddings",
            left: graph_emb.shape(),
            right: node_embs.shape(),
        });
    }
    Ok(graph_emb
        .matmul(&node_embs.transpose())?
        .l2_normalize_rows())
}

/// Maps an actor output in `[-1, 1]` to incentives in `[0, 1]`.
pub fn rescale_action(action: &[f64]) -> Vec<f64> {
    action.iter().map(|a| (a + 1.0) / 2.0).collect()
}

fn check_features(arch: &Architecture, features: &Tensor) -> Result<()> {
    if features.mat_shape() != (arch.node_count, arch.feature_width) {
        return Err(Error::Shape {
            op: "features",
            left: features.mat_shape(),
            right: (arch.node_count, arch.feature_width),
        });
    }
    Ok(())
}

fn build_encoders<R: Rng + ?Sized>(
    params: &mut ParamSet,
    arch: &Architecture,
    rng: &mut R,
) -> Vec<Encoder> {
    arch.variant
        .directions()
        .iter()
        .map(|&d| Encoder::new(params, d, arch, rng))
        .collect()
}

fn encode(
    encoders: &[Encoder],
    tape: &mut Tape,
    vars: &[Var],
    graph: &GraphInput,
    features: Var,
) -> Result<Vec<EncoderOutput>> {
    encoders
        .iter()
        .map(|e| e.forward(tape, vars, graph, features))
        .collect()
}

fn head_forward(head: &[Linear; 3], tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
    let h = head[0].forward(tape, vars, x)?;
    let h = tape.relu(h);
    let h = head[1].forward(tape, vars, h)?;
    let h = tape.relu(h);
    head[2].forward(tape, vars, h)
}

/// Deterministic policy: per-user action in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorNet {
    arch: Architecture,
    params: ParamSet,
    encoders: Vec<Encoder>,
    head: [Linear; 3],
}

impl ActorNet {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::new();
        let encoders = build_encoders(&mut params, &arch, rng);
        let head = [
            Linear::new(
                &mut params,
                "head.fc1",
                arch.score_width(),
                arch.hidden,
                rng,
            ),
            Linear::new(&mut params, "head.fc2", arch.hidden, arch.hidden, rng),
            Linear::new(&mut params, "head.fc3", arch.hidden, arch.node_count, rng),
        ];
        Ok(Self {
            arch,
            params,
            encoders,
            head,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encoders(&self) -> &[Encoder] {
        &self.encoders
    }

    /// Records the forward pass; `features` may be batched. Returns a
    /// `batch x 1 x |V|` node.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        graph: &GraphInput,
        features: Var,
    ) -> Result<Var> {
        check_features(&self.arch, tape.value(features))?;
        let outputs = encode(&self.encoders, tape, vars, graph, features)?;
        let scores: Vec<Var> = outputs.iter().map(|o| o.scores).collect();
        let joined = tape.concat_cols(&scores)?;
        let pre = head_forward(&self.head, tape, vars, joined)?;
        Ok(tape.tanh(pre))
    }

    /// Encoder outputs for inspection, on a fresh frozen tape.
    pub fn trace(
        &self,
        graph: &GraphInput,
        features: &DenseMatrix,
    ) -> Result<(Tape, Vec<EncoderOutput>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let f = tape.constant(Tensor::from(features));
        check_features(&self.arch, tape.value(f))?;
        let outputs = encode(&self.encoders, &mut tape, &vars, graph, f)?;
        Ok((tape, outputs))
    }

    pub fn act(&self, graph: &GraphInput, features: &DenseMatrix) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let f = tape.constant(Tensor::from(features));
        let out = self.forward(&mut tape, &vars, graph, f)?;
        Ok(tape.value(out).as_slice().to_vec())
    }

    /// Actions for a stack of feature matrices, one row per sample.
    pub fn act_batch(&self, graph: &GraphInput, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let f = tape.constant(features.clone());
        let out = self.forward(&mut tape, &vars, graph, f)?;
        Ok(tape.value(out).clone())
    }
}

/// State-action value network.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet {
    arch: Architecture,
    params: ParamSet,
    encoders: Vec<Encoder>,
    head: [Linear; 3],
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::new();
        let encoders = build_encoders(&mut params, &arch, rng);
        let head = [
            Linear::new(
                &mut params,
                "head.fc1",
                arch.score_width() + arch.node_count,
                arch.hidden,
                rng,
            ),
            Linear::new(&mut params, "head.fc2", arch.hidden, arch.hidden, rng),
            Linear::new(&mut params, "head.fc3", arch.hidden, 1, rng),
        ];
        Ok(Self {
            arch,
            params,
            encoders,
            head,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `action` is `batch x 1 x |V|` (or batch 1, broadcast). Returns a
    /// `batch x 1 x 1` node.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        graph: &GraphInput,
        features: Var,
        action: Var,
    ) -> Result<Var> {
        check_features(&self.arch, tape.value(features))?;
        let a = tape.value(action);
        if a.mat_shape() != (1, self.arch.node_count) {
            return Err(Error::Shape {
                op: "critic action",
                left: a.mat_shape(),
                right: (1, self.arch.node_count),
            });
        }
        let outputs = encode(&self.encoders, tape, vars, graph, features)?;
        let mut parts: Vec<Var> = outputs.iter().map(|o| o.scores).collect();
        parts.push(action);
        let joined = tape.concat_cols(&parts)?;
        head_forward(&self.head, tape, vars, joined)
    }

    pub fn q_value(
        &self,
        graph: &GraphInput,
        features: &DenseMatrix,
        action: &[f64],
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let f = tape.constant(Tensor::from(features));
        let a = tape.constant(Tensor::from(DenseMatrix::row_vector(action)));
        let q = self.forward(&mut tape, &vars, graph, f, a)?;
        Ok(tape.value(q).as_slice()[0])
    }
}
