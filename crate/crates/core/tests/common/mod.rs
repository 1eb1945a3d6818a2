#![allow(dead_code)]

use std::path::PathBuf;

use gac_core::graph::random_connected_undirected;
use gac_core::simenv::{init_population, Population};
use gac_core::DirectedSocialNetwork;
use rand::Rng;

/// Straight re-implementation of the choice model and the offer loop from
/// raw edge triples and a preference table. Shares no code with the crate.
#[derive(Clone, Debug)]
pub struct OracleEnv {
    pub n: usize,
    /// `(source, target, weight)`.
    pub edges: Vec<(usize, usize, f64)>,
    pub prefs: Vec<Vec<f64>>,
    pub budget: f64,
    pub behaviors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleStep {
    pub offers: Vec<f64>,
    pub behaviors: Vec<usize>,
    pub reward: f64,
    pub spent: f64,
}

fn first_max(values: &[f64]) -> usize {
    let mut idx = 0;
    for k in 1..values.len() {
        if values[k] > values[idx] {
            idx = k;
        }
    }
    idx
}

impl OracleEnv {
    pub fn from_parts(net: &DirectedSocialNetwork, pop: &Population, budget: f64) -> Self {
        let weights = net.weights().expect("weighted network");
        let edges = net
            .edges()
            .iter()
            .zip(weights)
            .map(|(e, &w)| (e.source, e.target, w))
            .collect();
        let m = pop.option_count();
        let prefs = (0..net.node_count())
            .map(|i| (0..m).map(|z| pop.preferences().get(i, z)).collect())
            .collect();
        Self {
            n: net.node_count(),
            edges,
            prefs,
            budget,
            behaviors: Vec::new(),
        }
    }

    pub fn reset(&mut self) -> OracleStep {
        self.behaviors = self.prefs.iter().map(|p| first_max(p)).collect();
        self.step(&vec![0.0; self.n])
    }

    pub fn step(&mut self, action: &[f64]) -> OracleStep {
        let n = self.n;
        let options = self.prefs[0].len();
        let out_deg: Vec<usize> = (0..n)
            .map(|i| self.edges.iter().filter(|e| e.0 == i).count())
            .collect();
        let in_deg: Vec<usize> = (0..n)
            .map(|i| self.edges.iter().filter(|e| e.1 == i).count())
            .collect();
        let mut left = self.budget;
        let mut next = vec![0; n];
        let mut offers = vec![0.0; n];
        let mut reward = 0.0;
        for i in 0..n {
            let o = if action[i] < left { action[i] } else { left };
            let utilities: Vec<f64> = (0..options)
                .map(|z| {
                    let mut k = 0.0;
                    for &(j, t, w) in &self.edges {
                        if t == i && self.behaviors[j] == z {
                            k += w;
                        }
                    }
                    let offer = if z == 0 { o } else { 0.0 };
                    self.prefs[i][z] + k + offer
                })
                .collect();
            let b = first_max(&utilities);
            let imbalance = 1.0 + (out_deg[i] as f64 - in_deg[i] as f64) / n as f64;
            if b == 0 {
                left -= o;
                reward += imbalance + (self.budget - o) / self.budget;
            } else {
                reward += -imbalance;
            }
            next[i] = b;
            offers[i] = o;
        }
        self.behaviors = next.clone();
        OracleStep {
            offers,
            behaviors: next,
            reward,
            spent: self.budget - left,
        }
    }
}

/// Random directed network on `n` nodes with every ordered pair present
/// with probability `density`, weighted from `seed`.
pub fn random_directed<R: Rng>(
    n: usize,
    density: f64,
    seed: u64,
    rng: &mut R,
) -> DirectedSocialNetwork {
    let mut pairs = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s != t && rng.random::<f64>() < density {
                pairs.push((s, t));
            }
        }
    }
    DirectedSocialNetwork::new(n, &pairs, true)
        .unwrap()
        .assign_random_weights(seed)
}

pub fn random_population(net: &DirectedSocialNetwork, options: usize, seed: u64) -> Population {
    init_population(net, options, seed).unwrap()
}

/// Directory holding the reference datasets.
pub fn data_dir() -> PathBuf {
    std::env::var_os("GAC_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data")))
}

/// First existing file among `names` in the data directory.
pub fn find_dataset(names: &[&str]) -> Option<PathBuf> {
    let dir = data_dir();
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

pub const DOLPHINS_FILES: [&str; 4] = [
    "dolphins.txt",
    "dolphins.mtx",
    "soc-dolphins.mtx",
    "out.dolphins",
];
pub const WIKI_VOTE_FILES: [&str; 3] = ["wiki-vote.txt", "Wiki-Vote.txt", "wiki_vote.txt"];

/// The Dolphins network when available, otherwise a connected random graph
/// with the same node and edge counts. The label says which.
pub fn dolphins_or_stand_in() -> (DirectedSocialNetwork, &'static str) {
    if let Some(path) = find_dataset(&DOLPHINS_FILES) {
        if let Ok(net) = gac_core::graph::load_edge_list(&path, false) {
            return (net, "Dolphins");
        }
    }
    (
        random_connected_undirected(62, 159, 0).unwrap(),
        "62-node/159-edge stand-in",
    )
}
