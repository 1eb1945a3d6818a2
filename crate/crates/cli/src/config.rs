//! Line-oriented `key=value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gac_core::policy::Variant;
use gac_core::trainer::{NoiseMode, TrainConfig};

/// Everything a run depends on. Written next to every output so the run
/// can be repeated with `--config <file>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: String,
    pub dataset: Option<PathBuf>,
    pub undirected: bool,
    /// `nodes:edges` for a seeded connected random graph instead of a file.
    pub synthetic: Option<(usize, usize)>,
    /// Seed of the synthetic graph's topology, kept apart from `seed_env`
    /// so that environment seeds vary weights and preferences only.
    pub graph_seed: u64,
    pub subnetwork_size: Option<usize>,
    pub subnetwork_seed_node: usize,
    pub budget: Option<f64>,
    pub seed_env: u64,
    pub seed_policy: u64,
    pub option_count: usize,
    pub snapshot: Option<PathBuf>,
    pub checkpoint: Option<String>,
    pub baseline: Option<String>,
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    pub eval_steps: usize,
    pub train: TrainConfig,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            dataset: None,
            undirected: false,
            synthetic: None,
            graph_seed: 0,
            subnetwork_size: None,
            subnetwork_seed_node: 0,
            budget: None,
            seed_env: 42,
            seed_policy: 0,
            option_count: 4,
            snapshot: None,
            checkpoint: None,
            baseline: None,
            policies: Vec::new(),
            seeds: Vec::new(),
            eval_steps: 150,
            train: TrainConfig::default(),
            out: PathBuf::from("."),
        }
    }
}

/// Budget used by the reference experiments for a dataset file name.
pub fn default_budget_for(dataset: &Path) -> Option<f64> {
    let name = dataset.file_name()?.to_string_lossy().to_ascii_lowercase();
    if name.contains("dolphin") {
        Some(3.0)
    } else if name.contains("twitter") {
        Some(20.0)
    } else if name.contains("wiki") {
        Some(40.0)
    } else {
        None
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("{key}: cannot parse '{value}'"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("{key}: expected true or false, got '{value}'"),
    }
}

fn non_empty(value: &str) -> Option<&str> {
    (!value.is_empty()).then_some(value)
}

impl ExperimentConfig {
    /// Key/value pairs in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        vec![
            ("command", self.command.clone()),
            (
                "dataset",
                opt_str(&self.dataset.as_ref().map(|p| p.display())),
            ),
            ("undirected", self.undirected.to_string()),
            (
                "synthetic",
                self.synthetic
                    .map(|(n, e)| format!("{n}:{e}"))
                    .unwrap_or_default(),
            ),
            ("graph_seed", self.graph_seed.to_string()),
            ("subnetwork_size", opt_str(&self.subnetwork_size)),
            (
                "subnetwork_seed_node",
                self.subnetwork_seed_node.to_string(),
            ),
            ("budget", opt_str(&self.budget)),
            ("seed_env", self.seed_env.to_string()),
            ("seed_policy", self.seed_policy.to_string()),
            ("option_count", self.option_count.to_string()),
            (
                "snapshot",
                opt_str(&self.snapshot.as_ref().map(|p| p.display())),
            ),
            ("checkpoint", opt_str(&self.checkpoint)),
            ("baseline", opt_str(&self.baseline)),
            ("policies", join(&self.policies)),
            ("seeds", join(&self.seeds)),
            ("eval_steps", self.eval_steps.to_string()),
            ("episodes", t.episodes.to_string()),
            ("steps", t.steps_per_episode.to_string()),
            ("exploration_episodes", t.exploration_episodes.to_string()),
            ("update_frequency", t.update_frequency.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("buffer_capacity", t.buffer_capacity.to_string()),
            ("gamma", t.updates.gamma.to_string()),
            ("tau", t.updates.tau.to_string()),
            ("lr_actor", t.updates.lr_actor.to_string()),
            ("lr_critic", t.updates.lr_critic.to_string()),
            ("target_noise", t.updates.target_noise.to_string()),
            ("target_noise_clip", t.updates.target_noise_clip.to_string()),
            ("noise", t.noise.to_string()),
            ("variant", t.variant.to_string()),
            ("embed_dim", t.embed_dim.to_string()),
            ("clusters", t.clusters.to_string()),
            ("hidden", t.hidden.to_string()),
            ("checkpoint_interval", t.checkpoint_interval.to_string()),
            ("checkpoint_eval_steps", t.checkpoint_eval_steps.to_string()),
            ("out", self.out.display().to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# gac experiment configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "command" => self.command = value.to_string(),
            "dataset" => self.dataset = non_empty(value).map(PathBuf::from),
            "undirected" => self.undirected = parse_bool(key, value)?,
            "synthetic" => {
                self.synthetic = match non_empty(value) {
                    None => None,
                    Some(v) => {
                        let (n, e) = v
                            .split_once(':')
                            .ok_or_else(|| anyhow!("synthetic: expected NODES:EDGES, got '{v}'"))?;
                        Some((parse_num(key, n)?, parse_num(key, e)?))
                    }
                }
            }
            "graph_seed" => self.graph_seed = parse_num(key, value)?,
            "subnetwork_size" => {
                self.subnetwork_size = non_empty(value).map(|v| parse_num(key, v)).transpose()?
            }
            "subnetwork_seed_node" => self.subnetwork_seed_node = parse_num(key, value)?,
            "budget" => self.budget = non_empty(value).map(|v| parse_num(key, v)).transpose()?,
            "seed_env" => self.seed_env = parse_num(key, value)?,
            "seed_policy" => self.seed_policy = parse_num(key, value)?,
            "option_count" => self.option_count = parse_num(key, value)?,
            "snapshot" => self.snapshot = non_empty(value).map(PathBuf::from),
            "checkpoint" => self.checkpoint = non_empty(value).map(str::to_string),
            "baseline" => self.baseline = non_empty(value).map(str::to_string),
            "policies" => {
                self.policies = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "eval_steps" => self.eval_steps = parse_num(key, value)?,
            "episodes" => t.episodes = parse_num(key, value)?,
            "steps" => t.steps_per_episode = parse_num(key, value)?,
            "exploration_episodes" => t.exploration_episodes = parse_num(key, value)?,
            "update_frequency" => t.update_frequency = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "buffer_capacity" => t.buffer_capacity = parse_num(key, value)?,
            "gamma" => t.updates.gamma = parse_num(key, value)?,
            "tau" => t.updates.tau = parse_num(key, value)?,
            "lr_actor" => t.updates.lr_actor = parse_num(key, value)?,
            "lr_critic" => t.updates.lr_critic = parse_num(key, value)?,
            "target_noise" => t.updates.target_noise = parse_num(key, value)?,
            "target_noise_clip" => t.updates.target_noise_clip = parse_num(key, value)?,
            "noise" => t.noise = value.parse::<NoiseMode>()?,
            "variant" => t.variant = value.parse::<Variant>()?,
            "embed_dim" => t.embed_dim = parse_num(key, value)?,
            "clusters" => t.clusters = parse_num(key, value)?,
            "hidden" => t.hidden = parse_num(key, value)?,
            "checkpoint_interval" => t.checkpoint_interval = parse_num(key, value)?,
            "checkpoint_eval_steps" => t.checkpoint_eval_steps = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => bail!("unknown configuration key '{other}'"),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`; blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, got '{line}'", no + 1))?;
            self.set(k.trim(), v)
                .with_context(|| format!("line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.budget {
            if !(b > 0.0 && b.is_finite()) {
                bail!("budget must be positive, got {b}");
            }
        }
        if self.option_count < 2 {
            bail!("option_count must be at least 2");
        }
        self.train.validate()?;
        Ok(())
    }

    /// Explicit budget, else the dataset's reference budget.
    pub fn resolved_budget(&self) -> Result<f64> {
        if let Some(b) = self.budget {
            return Ok(b);
        }
        self.dataset
            .as_deref()
            .and_then(default_budget_for)
            .ok_or_else(|| anyhow!("no default budget for this network; pass --budget"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig {
            command: "train".into(),
            dataset: Some("data/dolphins.txt".into()),
            undirected: true,
            synthetic: Some((62, 159)),
            budget: Some(3.0),
            policies: vec!["gac".into(), "uniform".into()],
            seeds: vec![1, 2, 3],
            ..ExperimentConfig::default()
        };
        c.train.noise = NoiseMode::Static {
            mean: 0.0,
            std: 0.2,
        };
        c.train.variant = Variant::GacIn;
        c.train.updates.lr_actor = 1.5e-4;
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_unknown_keys() {
        let c = ExperimentConfig::parse("# hi\n\nbudget = 5\n").unwrap();
        assert_eq!(c.budget, Some(5.0));
        let err = ExperimentConfig::parse("budget=5\nfoo=1\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 2"));
        assert!(ExperimentConfig::parse("budget").is_err());
    }

    #[test]
    fn defaults_follow_reference_settings() {
        let c = ExperimentConfig::default();
        assert_eq!(c.train.episodes, 10_000);
        assert_eq!(c.train.steps_per_episode, 10);
        assert_eq!(c.train.exploration_episodes, 1_000);
        assert_eq!(c.train.update_frequency, 2);
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.train.buffer_capacity, 100_000);
        assert_eq!(c.train.updates.gamma, 0.99);
        assert_eq!(c.train.updates.tau, 1e-3);
        assert_eq!(c.train.updates.lr_actor, 3e-4);
        assert_eq!(c.train.updates.lr_critic, 3e-3);
        assert_eq!(c.eval_steps, 150);
        assert_eq!(c.option_count, 4);
    }

    #[test]
    fn budget_defaults_by_dataset_name() {
        assert_eq!(default_budget_for(Path::new("x/dolphins.txt")), Some(3.0));
        assert_eq!(default_budget_for(Path::new("Twitter_ego.txt")), Some(20.0));
        assert_eq!(default_budget_for(Path::new("wiki-vote.txt")), Some(40.0));
        let c = ExperimentConfig {
            dataset: Some("other.txt".into()),
            ..ExperimentConfig::default()
        };
        assert!(c.resolved_budget().is_err());
        assert!(ExperimentConfig {
            budget: Some(-1.0),
            ..ExperimentConfig::default()
        }
        .validate()
        .is_err());
    }
}
