//! Directed social networks: loading, influence weights, adjacency
//! matrices and sub-network extraction.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{fmt_f64, DenseMatrix};

/// Slack allowed on the incoming-weight bound after normalisation.
pub const IN_WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
}

/// A directed graph whose edge `i -> j` means user `i` influences user `j`.
///
/// Node ids are `0..node_count`. Weights are optional until
/// [`assign_random_weights`](Self::assign_random_weights) or
/// [`with_weights`](Self::with_weights) fills them.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectedSocialNetwork {
    node_count: usize,
    edges: Vec<Edge>,
    weights: Option<Vec<f64>>,
    directed: bool,
    // Per node: indices into `edges` of incoming / outgoing edges.
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

/// Binary out- and in-adjacency. `a_out[i][j] = 1` iff `i -> j`; row `i`
/// of `a_in` marks the in-neighbours of `i`, so `a_in = a_out^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyPair {
    pub a_out: DenseMatrix,
    pub a_in: DenseMatrix,
}

impl DirectedSocialNetwork {
    /// Builds an unweighted network. With `directed == false` every pair
    /// is expanded into both directions.
    pub fn new(node_count: usize, pairs: &[(usize, usize)], directed: bool) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::invalid("a network needs at least one node"));
        }
        let mut edges = Vec::with_capacity(if directed {
            pairs.len()
        } else {
            2 * pairs.len()
        });
        let mut seen = HashSet::new();
        for &(s, t) in pairs {
            for (a, b) in [(s, t), (t, s)]
                .into_iter()
                .take(if directed { 1 } else { 2 })
            {
                if a >= node_count || b >= node_count {
                    return Err(Error::NodeOutOfRange {
                        node: a.max(b),
                        count: node_count,
                    });
                }
                if a == b {
                    return Err(Error::invalid(format!("self-loop on node {a}")));
                }
                if !seen.insert((a, b)) {
                    return Err(Error::invalid(format!("duplicate edge {a} -> {b}")));
                }
                edges.push(Edge {
                    source: a,
                    target: b,
                });
            }
        }
        Ok(Self::from_parts(node_count, edges, None, directed))
    }

    fn from_parts(
        node_count: usize,
        edges: Vec<Edge>,
        weights: Option<Vec<f64>>,
        directed: bool,
    ) -> Self {
        let mut incoming = vec![Vec::new(); node_count];
        let mut outgoing = vec![Vec::new(); node_count];
        for (k, e) in edges.iter().enumerate() {
            outgoing[e.source].push(k);
            incoming[e.target].push(k);
        }
        Self {
            node_count,
            edges,
            weights,
            directed,
            incoming,
            outgoing,
        }
    }

    /// Attaches explicit weights (one per edge, in edge order).
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.edges.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} edges",
                weights.len(),
                self.edges.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(Error::invalid(format!("weight {w} outside (0, 1]")));
        }
        self.weights = Some(weights);
        if let Some(node) =
            (0..self.node_count).find(|&v| self.incoming_weight_sum(v) > 1.0 + IN_WEIGHT_TOLERANCE)
        {
            return Err(Error::invalid(format!(
                "incoming weights of node {node} sum above 1"
            )));
        }
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of stored directed edges.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `true` when the edges came from a directed source.
    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Edge count as a dataset reports it: undirected sources count each
    /// bidirected pair once.
    pub fn reported_edge_count(&self) -> usize {
        if self.directed {
            self.edges.len()
        } else {
            self.edges.len() / 2
        }
    }

    /// `2 |E| / |V|` using the reported edge count.
    pub fn average_degree(&self) -> f64 {
        2.0 * self.reported_edge_count() as f64 / self.node_count as f64
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn has_weights(&self) -> bool {
        self.weights.is_some()
    }

    /// Weight of edge `k`; 0 when weights are not assigned.
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        self.weights.as_ref().map_or(0.0, |w| w[k])
    }

    /// In-neighbours of `node` as `(source, weight)` pairs.
    pub fn in_neighbors(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.incoming[node]
            .iter()
            .map(move |&k| (self.edges[k].source, self.weight(k)))
    }

    pub fn out_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.outgoing[node]
            .iter()
            .map(move |&k| self.edges[k].target)
    }

    pub fn incoming_weight_sum(&self, node: usize) -> f64 {
        self.in_neighbors(node).map(|(_, w)| w).sum()
    }

    /// `(|N_in|, |N_out|)` for `node`.
    pub fn degrees(&self, node: usize) -> Result<(usize, usize)> {
        if node >= self.node_count {
            return Err(Error::NodeOutOfRange {
                node,
                count: self.node_count,
            });
        }
        Ok((self.incoming[node].len(), self.outgoing[node].len()))
    }

    pub fn adjacency_matrices(&self) -> AdjacencyPair {
        let n = self.node_count;
        let mut a_out = DenseMatrix::zeros(n, n);
        let mut a_in = DenseMatrix::zeros(n, n);
        for e in &self.edges {
            a_out.set(e.source, e.target, 1.0);
            a_in.set(e.target, e.source, 1.0);
        }
        AdjacencyPair { a_out, a_in }
    }

    /// Draws every weight uniformly from `(0, 1]`, then rescales the
    /// incoming weights of any node whose sum exceeds 1 so that it sums to
    /// exactly 1.
    pub fn assign_random_weights(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // random() is in [0, 1); flip it into (0, 1].
        let mut weights: Vec<f64> = (0..self.edges.len())
            .map(|_| 1.0 - rng.random::<f64>())
            .collect();
        for node in 0..self.node_count {
            let sum: f64 = self.incoming[node].iter().map(|&k| weights[k]).sum();
            if sum > 1.0 {
                for &k in &self.incoming[node] {
                    weights[k] /= sum;
                }
            }
        }
        self.weights = Some(weights);
        self
    }

    /// Breadth-first expansion from `seed_node` over undirected
    /// reachability, neighbours visited in ascending id order. The first
    /// `target_size` visited nodes are kept with their induced edges and
    /// relabelled in visit order.
    pub fn extract_subnetwork(&self, seed_node: usize, target_size: usize) -> Result<Self> {
        if seed_node >= self.node_count {
            return Err(Error::NodeOutOfRange {
                node: seed_node,
                count: self.node_count,
            });
        }
        if target_size == 0 || target_size > self.node_count {
            return Err(Error::invalid(format!(
                "target size {target_size} not in 1..={}",
                self.node_count
            )));
        }
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            neighbors[e.source].push(e.target);
            neighbors[e.target].push(e.source);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }

        let mut new_id = vec![usize::MAX; self.node_count];
        let mut order = Vec::with_capacity(target_size);
        let mut queue = VecDeque::from([seed_node]);
        new_id[seed_node] = 0;
        order.push(seed_node);
        'bfs: while let Some(v) = queue.pop_front() {
            for &u in &neighbors[v] {
                if order.len() == target_size {
                    break 'bfs;
                }
                if new_id[u] == usize::MAX {
                    new_id[u] = order.len();
                    order.push(u);
                    queue.push_back(u);
                }
            }
        }
        if order.len() < target_size {
            return Err(Error::ComponentTooSmall {
                achieved: order.len(),
                target: target_size,
            });
        }

        let mut edges = Vec::new();
        let mut weights = self.weights.as_ref().map(|_| Vec::new());
        for (k, e) in self.edges.iter().enumerate() {
            let (s, t) = (new_id[e.source], new_id[e.target]);
            if s != usize::MAX && t != usize::MAX {
                edges.push(Edge {
                    source: s,
                    target: t,
                });
                if let Some(w) = weights.as_mut() {
                    w.push(self.weight(k));
                }
            }
        }
        Ok(Self::from_parts(target_size, edges, weights, self.directed))
    }

    /// Text dump: a `|V| |E| directed_flag weighted_flag` header, then one
    /// `src dst weight` line per directed edge (weight omitted when unset).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {}",
            self.node_count,
            self.edges.len(),
            u8::from(self.directed),
            u8::from(self.weights.is_some())
        );
        for (k, e) in self.edges.iter().enumerate() {
            match &self.weights {
                Some(w) => {
                    let _ = writeln!(out, "{} {} {}", e.source, e.target, fmt_f64(w[k]));
                }
                None => {
                    let _ = writeln!(out, "{} {}", e.source, e.target);
                }
            }
        }
        out
    }

    /// Parses the first `1 + |E|` lines of `lines` as a [`dump`](Self::dump).
    pub fn parse_dump<'a, I>(lines: &mut I) -> Result<Self>
    where
        I: Iterator<Item = &'a str>,
    {
        let bad = |m: String| Error::format("network dump", m);
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad header '{header}'"))))
            .collect::<Result<_>>()?;
        let [n, m, flag, weighted_flag] = head[..] else {
            return Err(bad(format!("bad header '{header}'")));
        };
        let mut edges = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        let weighted = weighted_flag != 0;
        for i in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("expected {m} edges, got {i}")))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let has_w = match toks.len() {
                2 => false,
                3 => true,
                _ => return Err(bad(format!("bad edge line '{line}'"))),
            };
            if has_w != weighted {
                return Err(bad(format!(
                    "edge line '{line}' does not match the weighted flag"
                )));
            }
            let s: usize = toks[0]
                .parse()
                .map_err(|_| bad(format!("bad edge line '{line}'")))?;
            let t: usize = toks[1]
                .parse()
                .map_err(|_| bad(format!("bad edge line '{line}'")))?;
            if s >= n || t >= n || s == t {
                return Err(bad(format!("invalid edge {s} -> {t}")));
            }
            edges.push(Edge {
                source: s,
                target: t,
            });
            if has_w {
                weights.push(
                    toks[2]
                        .parse::<f64>()
                        .map_err(|_| bad(format!("bad weight in '{line}'")))?,
                );
            }
        }
        let net = Self::from_parts(n, edges, None, flag != 0);
        if weighted {
            net.with_weights(weights)
        } else {
            Ok(net)
        }
    }
}

/// Parses an edge list. Lines starting with `#` or `%` are comments;
/// MatrixMarket coordinate files (first line `%%MatrixMarket`) have their
/// dimension line skipped. Each remaining line holds `src dst` integers
/// (extra numeric columns are ignored). Ids are compacted to
/// `0..|V|` in order of first appearance; self-loops and repeated pairs are
/// dropped.
pub fn parse_edge_list(text: &str, directed: bool) -> Result<DirectedSocialNetwork> {
    let matrix_market = text.trim_start().starts_with("%%MatrixMarket");
    let mut skip_dimension_line = matrix_market;
    let mut ids: HashMap<i64, usize> = HashMap::new();
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('%') {
            continue;
        }
        if skip_dimension_line {
            skip_dimension_line = false;
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse {
            line: no + 1,
            message,
        };
        if toks.len() < 2 {
            return Err(parse_err(format!("expected 'src dst', found '{line}'")));
        }
        let mut endpoints = [0usize; 2];
        for (slot, tok) in endpoints.iter_mut().zip(&toks[..2]) {
            let raw_id: i64 = tok
                .parse()
                .map_err(|_| parse_err(format!("'{tok}' is not an integer node id")))?;
            let next = ids.len();
            *slot = *ids.entry(raw_id).or_insert(next);
        }
        if let Some(extra) = toks[2..].iter().find(|t| t.parse::<f64>().is_err()) {
            return Err(parse_err(format!("unexpected token '{extra}'")));
        }
        let [s, t] = endpoints;
        if s == t {
            continue;
        }
        let key = if directed {
            (s, t)
        } else {
            (s.min(t), s.max(t))
        };
        if seen.insert(key) {
            pairs.push((s, t));
        }
    }
    if ids.is_empty() {
        return Err(Error::Empty("edge list has no edges".into()));
    }
    DirectedSocialNetwork::new(ids.len(), &pairs, directed)
}

pub fn load_edge_list(path: impl AsRef<Path>, directed: bool) -> Result<DirectedSocialNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_edge_list(&text, directed).map_err(|e| match e {
        Error::Empty(_) => Error::Empty(format!("{} has no edges", path.display())),
        other => other,
    })
}

/// Connected undirected random graph with exactly `edge_count` pairs: a
/// random spanning tree plus uniformly drawn extra pairs.
pub fn random_connected_undirected(
    node_count: usize,
    edge_count: usize,
    seed: u64,
) -> Result<DirectedSocialNetwork> {
    let max_edges = node_count * node_count.saturating_sub(1) / 2;
    if node_count < 2 || edge_count + 1 < node_count || edge_count > max_edges {
        return Err(Error::invalid(format!(
            "cannot build a connected graph with {node_count} nodes and {edge_count} edges"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..node_count).collect();
    labels.shuffle(&mut rng);
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(edge_count);
    for i in 1..node_count {
        let j = rng.random_range(0..i);
        let (a, b) = (labels[i], labels[j]);
        seen.insert((a.min(b), a.max(b)));
        pairs.push((a, b));
    }
    while pairs.len() < edge_count {
        let a = rng.random_range(0..node_count);
        let b = rng.random_range(0..node_count);
        if a != b && seen.insert((a.min(b), a.max(b))) {
            pairs.push((a, b));
        }
    }
    DirectedSocialNetwork::new(node_count, &pairs, false)
}
