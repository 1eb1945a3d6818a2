//! Agent-based simulation of users choosing among behaviour options.
//!
//! Each user picks the option with the highest utility: its own
//! preference, plus the summed influence of in-neighbours who picked that
//! option on the previous step, plus the incentive when the option is the
//! target one. The provider offers incentives user by user in ascending id
//! order and only pays for users who end up choosing the target.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{AdjacencyPair, DirectedSocialNetwork};
use crate::tensor::{fmt_f64, DenseMatrix};

pub const DEFAULT_OPTION_COUNT: usize = 4;
/// Index of the behaviour the provider wants users to adopt.
pub const TARGET_OPTION: usize = 0;

/// Per-user preferences and current behaviours.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    preferences: DenseMatrix,
    behaviors: Option<Vec<usize>>,
    target_option: usize,
}

/// Samples preferences i.i.d. uniform on `[0, 1)` for every user and
/// option.
pub fn init_population(
    net: &DirectedSocialNetwork,
    option_count: usize,
    seed: u64,
) -> Result<Population> {
    if option_count < 2 {
        return Err(Error::invalid("at least two behaviour options are needed"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = net.node_count();
    let data = (0..n * option_count).map(|_| rng.random::<f64>()).collect();
    Population::new(DenseMatrix::from_vec(n, option_count, data)?)
}

impl Population {
    pub fn new(preferences: DenseMatrix) -> Result<Self> {
        if preferences.cols() < 2 {
            return Err(Error::invalid("at least two behaviour options are needed"));
        }
        if preferences
            .as_slice()
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::invalid("preferences must lie in [0, 1]"));
        }
        Ok(Self {
            preferences,
            behaviors: None,
            target_option: TARGET_OPTION,
        })
    }

    pub fn preferences(&self) -> &DenseMatrix {
        &self.preferences
    }

    pub fn option_count(&self) -> usize {
        self.preferences.cols()
    }

    pub fn user_count(&self) -> usize {
        self.preferences.rows()
    }

    pub fn target_option(&self) -> usize {
        self.target_option
    }

    /// Behaviours from the latest step; `None` before the first reset.
    pub fn behaviors(&self) -> Option<&[usize]> {
        self.behaviors.as_deref()
    }

    /// Each user's favourite option ignoring influence and incentives.
    pub fn preference_argmax(&self) -> Vec<usize> {
        (0..self.user_count())
            .map(|i| argmax_lowest(self.preferences.row(i)))
            .collect()
    }

    /// Sum of `w_ji` over in-neighbours `j` whose previous behaviour was
    /// `option`.
    pub fn social_influence(
        &self,
        net: &DirectedSocialNetwork,
        node: usize,
        option: usize,
        prev_behaviors: &[usize],
    ) -> f64 {
        net.in_neighbors(node)
            .filter(|&(j, _)| prev_behaviors[j] == option)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn utility(
        &self,
        net: &DirectedSocialNetwork,
        node: usize,
        option: usize,
        incentive: f64,
        prev_behaviors: &[usize],
    ) -> f64 {
        let base = self.preferences.get(node, option)
            + self.social_influence(net, node, option, prev_behaviors);
        if option == self.target_option {
            base + incentive
        } else {
            base
        }
    }

    pub fn choose_behavior(
        &self,
        net: &DirectedSocialNetwork,
        node: usize,
        incentive: f64,
        prev_behaviors: &[usize],
    ) -> usize {
        let utilities: Vec<f64> = (0..self.option_count())
            .map(|m| self.utility(net, node, m, incentive, prev_behaviors))
            .collect();
        argmax_lowest(&utilities)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-user reward: `a (1 + (out - in) / |V|) + ((a + 1) / 2) (B - o) / B`
/// with `a = +1` for an engaged user and `-1` otherwise.
pub fn intermediate_reward(
    engaged: bool,
    out_degree: usize,
    in_degree: usize,
    node_count: usize,
    incentive: f64,
    budget: f64,
) -> f64 {
    let alpha = if engaged { 1.0 } else { -1.0 };
    let influence = alpha * (1.0 + (out_degree as f64 - in_degree as f64) / node_count as f64);
    let efficiency = (alpha + 1.0) / 2.0 * (budget - incentive) / budget;
    influence + efficiency
}

/// Fraction of users whose behaviour is the target option.
pub fn engaged_ratio(behaviors: &[usize]) -> f64 {
    if behaviors.is_empty() {
        return 0.0;
    }
    engaged_count(behaviors) as f64 / behaviors.len() as f64
}

pub fn engaged_count(behaviors: &[usize]) -> usize {
    behaviors.iter().filter(|&&b| b == TARGET_OPTION).count()
}

/// Feature matrix with rows `[incentive, one-hot(behaviour)]`.
pub fn feature_matrix(incentives: &[f64], behaviors: &[usize], option_count: usize) -> DenseMatrix {
    let n = behaviors.len();
    let mut f = DenseMatrix::zeros(n, 1 + option_count);
    for i in 0..n {
        f.set(i, 0, incentives[i]);
        f.set(i, 1 + behaviors[i], 1.0);
    }
    f
}

/// What the agent observes: the fixed adjacency pair and the per-user
/// feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub adjacency: Arc<AdjacencyPair>,
    pub features: DenseMatrix,
}

/// Outcome of one round of incentive offers.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    /// Incentive offered to each user after capping by the remaining budget.
    pub incentives: Vec<f64>,
    pub behaviors: Vec<usize>,
    pub step_reward: f64,
    /// Total paid to users who chose the target.
    pub spent: f64,
    pub engaged_ratio: f64,
}

impl StepLog {
    pub fn engaged_count(&self) -> usize {
        engaged_count(&self.behaviors)
    }

    /// Incentives actually paid: the offer for engaged users, 0 otherwise.
    pub fn charged(&self) -> impl Iterator<Item = f64> + '_ {
        self.incentives
            .iter()
            .zip(&self.behaviors)
            .map(|(&o, &b)| if b == TARGET_OPTION { o } else { 0.0 })
    }
}

/// Network, population and per-step budget.
#[derive(Clone, Debug)]
pub struct Environment {
    network: Arc<DirectedSocialNetwork>,
    adjacency: Arc<AdjacencyPair>,
    degrees: Vec<(usize, usize)>,
    population: Population,
    budget: f64,
    seed: u64,
}

impl Environment {
    /// `network` must carry influence weights.
    pub fn new(
        network: DirectedSocialNetwork,
        population: Population,
        budget: f64,
        seed: u64,
    ) -> Result<Self> {
        if !network.has_weights() {
            return Err(Error::invalid("the network has no influence weights"));
        }
        if population.user_count() != network.node_count() {
            return Err(Error::invalid(format!(
                "{} preference rows for {} users",
                population.user_count(),
                network.node_count()
            )));
        }
        check_budget(budget)?;
        let degrees = (0..network.node_count())
            .map(|v| network.degrees(v))
            .collect::<Result<_>>()?;
        Ok(Self {
            adjacency: Arc::new(network.adjacency_matrices()),
            network: Arc::new(network),
            degrees,
            population,
            budget,
            seed,
        })
    }

    /// Random weights and preferences, both derived from `seed`.
    pub fn generate(
        network: DirectedSocialNetwork,
        option_count: usize,
        budget: f64,
        seed: u64,
    ) -> Result<Self> {
        let network = network.assign_random_weights(seed);
        let population = init_population(
            &network,
            option_count,
            seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        )?;
        Self::new(network, population, budget, seed)
    }

    pub fn network(&self) -> &DirectedSocialNetwork {
        &self.network
    }

    pub fn adjacency(&self) -> &Arc<AdjacencyPair> {
        &self.adjacency
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn node_count(&self) -> usize {
        self.network.node_count()
    }

    pub fn option_count(&self) -> usize {
        self.population.option_count()
    }

    pub fn feature_width(&self) -> usize {
        1 + self.option_count()
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn set_budget(&mut self, budget: f64) -> Result<()> {
        check_budget(budget)?;
        self.budget = budget;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn behaviors(&self) -> Option<&[usize]> {
        self.population.behaviors()
    }

    /// Ratio of engaged users for the current behaviours (0 before reset).
    pub fn engaged_ratio(&self) -> f64 {
        self.behaviors().map_or(0.0, engaged_ratio)
    }

    /// Starts an episode: every user first holds its preference argmax,
    /// then one round with no incentives is played.
    pub fn reset(&mut self) -> EnvState {
        self.population.behaviors = Some(self.population.preference_argmax());
        let zeros = vec![0.0; self.node_count()];
        let (_, state) = self.step(&zeros).expect("a zero action is always valid");
        state
    }

    /// One round of offers. `action[i]` is the incentive requested for
    /// user `i`; it is capped by the budget still unspent this round.
    pub fn step(&mut self, action: &[f64]) -> Result<(StepLog, EnvState)> {
        let n = self.node_count();
        if action.len() != n {
            return Err(Error::invalid(format!(
                "action has {} entries for {n} users",
                action.len()
            )));
        }
        if let Some((i, a)) = action
            .iter()
            .enumerate()
            .find(|(_, a)| !(0.0..=1.0).contains(*a))
        {
            return Err(Error::invalid(format!("action[{i}] = {a} outside [0, 1]")));
        }
        let prev = match self.population.behaviors.take() {
            Some(b) => b,
            None => self.population.preference_argmax(),
        };

        let mut remaining = self.budget;
        let mut incentives = Vec::with_capacity(n);
        let mut behaviors = Vec::with_capacity(n);
        let mut step_reward = 0.0;
        for (i, &requested) in action.iter().enumerate() {
            let offer = requested.min(remaining);
            let choice = self
                .population
                .choose_behavior(&self.network, i, offer, &prev);
            let engaged = choice == TARGET_OPTION;
            if engaged {
                remaining -= offer;
            }
            let (in_deg, out_deg) = self.degrees[i];
            step_reward += intermediate_reward(engaged, out_deg, in_deg, n, offer, self.budget);
            incentives.push(offer);
            behaviors.push(choice);
        }

        let features = feature_matrix(&incentives, &behaviors, self.option_count());
        let log = StepLog {
            step_reward,
            spent: self.budget - remaining,
            engaged_ratio: engaged_ratio(&behaviors),
            incentives,
            behaviors: behaviors.clone(),
        };
        self.population.behaviors = Some(behaviors);
        Ok((
            log,
            EnvState {
                adjacency: self.adjacency.clone(),
                features,
            },
        ))
    }

    /// Snapshot text: header, seed, budget, the network dump and the
    /// preference matrix, all floats at 17 significant digits.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "budget {}", fmt_f64(self.budget));
        let _ = writeln!(out, "network");
        out.push_str(&self.network.dump());
        let prefs = self.population.preferences();
        let _ = writeln!(out, "preferences {} {}", prefs.rows(), prefs.cols());
        for r in 0..prefs.rows() {
            let row: Vec<String> = prefs.row(r).iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let bad = |m: String| Error::format("environment snapshot", m);
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("missing {what}")));
        let header = next("header")?;
        if header != format!("{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}") {
            return Err(bad(format!("unexpected header '{header}'")));
        }
        let seed = keyed(next("seed")?, "seed")
            .and_then(|v| v.parse::<u64>().ok())
            .ok_or_else(|| bad("bad seed line".into()))?;
        let budget = keyed(next("budget")?, "budget")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| bad("bad budget line".into()))?;
        if next("network marker")? != "network" {
            return Err(bad("expected 'network'".into()));
        }
        let network = DirectedSocialNetwork::parse_dump(&mut lines)?;
        let dims = lines
            .next()
            .and_then(|l| keyed(l, "preferences"))
            .ok_or_else(|| bad("missing preferences header".into()))?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .filter_map(|t| t.parse().ok())
            .collect();
        let [rows, cols] = dims[..] else {
            return Err(bad("bad preferences header".into()));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing preference row {r}")))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| bad(format!("bad preference '{tok}'")))?,
                );
            }
            if data.len() - before != cols {
                return Err(bad(format!("preference row {r} has the wrong length")));
            }
        }
        let population = Population::new(DenseMatrix::from_vec(rows, cols, data)?)?;
        Self::new(network, population, budget, seed)
    }

    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.snapshot())?;
        Ok(())
    }

    pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_snapshot(&fs::read_to_string(path)?)
    }
}

const SNAPSHOT_MAGIC: &str = "gac-env";
const SNAPSHOT_VERSION: u32 = 1;

fn keyed<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key)?.strip_prefix(' ')
}

fn check_budget(budget: f64) -> Result<()> {
    if budget > 0.0 && budget.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "budget must be positive, got {budget}"
        )))
    }
}
