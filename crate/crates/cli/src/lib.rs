//! Experiment commands: build an environment snapshot, train an agent,
//! evaluate a policy and compare several policies across seeds.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gac_core::baselines::{Baseline, IncentivePolicy};
use gac_core::graph::{load_edge_list, random_connected_undirected};
use gac_core::policy::Variant;
use gac_core::tensor::Checkpoint;
use gac_core::trainer::{
    evaluate, evaluation_csv, tail_mean_engaged, train_with_progress, training_log_csv, EvalStep,
    GacPolicy, NoiseMode,
};
use gac_core::{DirectedSocialNetwork, Environment};

pub use config::ExperimentConfig;

pub const SNAPSHOT_FILE: &str = "env.snapshot";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const COMPARE_FILE: &str = "compare.csv";
/// Evaluation summaries average the engaged count over this many final steps.
pub const SUMMARY_WINDOW: usize = 50;

#[derive(Parser, Debug)]
#[command(
    name = "gac",
    version,
    about = "Incentive allocation experiments on social networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build network, weights and preferences and write an environment snapshot.
    GenEnv(CommonArgs),
    /// Train an agent on a snapshot.
    Train(CommonArgs),
    /// Roll out a trained checkpoint or a baseline and write per-step metrics.
    Eval(CommonArgs),
    /// Roll out several policies over several environment seeds.
    Compare(CommonArgs),
    /// Repeat a run from a configuration file written by an earlier run.
    Rerun { config: PathBuf },
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// Configuration file applied before any other flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Edge list file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Treat the edge list as undirected.
    #[arg(long)]
    pub undirected: bool,
    /// Seeded random connected graph `NODES:EDGES` instead of a dataset.
    #[arg(long, value_name = "NODES:EDGES")]
    pub synthetic: Option<String>,
    /// Keep only a breadth-first subnetwork of this many users.
    #[arg(long)]
    pub subnetwork: Option<usize>,
    /// Start user of the subnetwork search.
    #[arg(long)]
    pub seed_node: Option<usize>,
    /// Incentive budget per step; defaults by dataset name.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Seed for influence weights and preferences.
    #[arg(long)]
    pub seed_env: Option<u64>,
    /// Seed for network initialisation, noise and replay sampling.
    #[arg(long)]
    pub seed_policy: Option<u64>,
    /// Number of behavior options, the target included.
    #[arg(long)]
    pub options: Option<usize>,
    /// Training episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Steps per training episode (train) or rollout length (eval, compare).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Episodes of pure exploration before updates start.
    #[arg(long)]
    pub exploration: Option<usize>,
    /// Replay minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `adaptive` or `static:MEAN:STD`.
    #[arg(long)]
    pub noise: Option<NoiseMode>,
    /// gac, gac-in or gac-out.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Environment snapshot; defaults to OUT/env.snapshot.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Checkpoint file; `{seed}` is replaced by the environment seed in `compare`.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// none, uniform or ucb-pricing.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Comma-separated: gac, none, uniform, ucb-pricing or LABEL=CHECKPOINT.
    #[arg(long)]
    pub policies: Option<String>,
    /// Comma-separated environment seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Any other configuration key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    /// Resolves the configuration: defaults, then `--config`, then flags.
    pub fn resolve(&self, command: &str) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            c.apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        c.command = command.to_string();
        if let Some(v) = &self.dataset {
            c.dataset = Some(v.clone());
        }
        if self.undirected {
            c.undirected = true;
        }
        if let Some(v) = &self.synthetic {
            c.set("synthetic", v)?;
        }
        if let Some(v) = self.subnetwork {
            c.subnetwork_size = Some(v);
        }
        if let Some(v) = self.seed_node {
            c.subnetwork_seed_node = v;
        }
        if let Some(v) = self.budget {
            c.budget = Some(v);
        }
        if let Some(v) = self.seed_env {
            c.seed_env = v;
        }
        if let Some(v) = self.seed_policy {
            c.seed_policy = v;
        }
        if let Some(v) = self.options {
            c.option_count = v;
        }
        if let Some(v) = self.episodes {
            c.train.episodes = v;
        }
        if let Some(v) = self.steps {
            if command == "train" {
                c.train.steps_per_episode = v;
            } else {
                c.eval_steps = v;
            }
        }
        if let Some(v) = self.exploration {
            c.train.exploration_episodes = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.noise {
            c.train.noise = v;
        }
        if let Some(v) = self.variant {
            c.train.variant = v;
        }
        if let Some(v) = &self.snapshot {
            c.snapshot = Some(v.clone());
        }
        if let Some(v) = &self.checkpoint {
            c.checkpoint = Some(v.clone());
        }
        if let Some(v) = &self.baseline {
            c.baseline = Some(v.clone());
        }
        if let Some(v) = &self.policies {
            c.set("policies", v)?;
        }
        if let Some(v) = &self.seeds {
            c.set("seeds", v)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{kv}'"))?;
            c.set(k.trim(), v)?;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses arguments and runs the selected command; returns the text to print.
pub fn run(cli: Cli) -> Result<String> {
    let config = match &cli.command {
        Command::GenEnv(a) => a.resolve("gen-env")?,
        Command::Train(a) => a.resolve("train")?,
        Command::Eval(a) => a.resolve("eval")?,
        Command::Compare(a) => a.resolve("compare")?,
        Command::Rerun { config } => {
            let text = fs::read_to_string(config)
                .with_context(|| format!("reading {}", config.display()))?;
            let c = ExperimentConfig::parse(&text)
                .with_context(|| format!("in {}", config.display()))?;
            c.validate()?;
            c
        }
    };
    execute(&config)
}

pub fn execute(config: &ExperimentConfig) -> Result<String> {
    match config.command.as_str() {
        "gen-env" => cmd_gen_env(config),
        "train" => cmd_train(config),
        "eval" => cmd_eval(config),
        "compare" => cmd_compare(config),
        "" => bail!("configuration does not name a command"),
        other => bail!("unknown command '{other}'"),
    }
}

/// The network described by `dataset`/`synthetic`, optionally cut down to
/// a breadth-first subnetwork.
pub fn build_network(config: &ExperimentConfig) -> Result<DirectedSocialNetwork> {
    let net = match (&config.dataset, config.synthetic) {
        (Some(_), Some(_)) => bail!("give either a dataset or a synthetic graph, not both"),
        (Some(path), None) => load_edge_list(path, !config.undirected)
            .with_context(|| format!("loading dataset {}", path.display()))?,
        (None, Some((n, e))) => random_connected_undirected(n, e, config.graph_seed)?,
        (None, None) => bail!("no network given (use --dataset or --synthetic)"),
    };
    Ok(match config.subnetwork_size {
        Some(size) => net.extract_subnetwork(config.subnetwork_seed_node, size)?,
        None => net,
    })
}

/// Budget from the configuration, falling back to the dataset default.
fn generation_budget(config: &ExperimentConfig) -> Result<f64> {
    if config.synthetic.is_some() && config.budget.is_none() {
        bail!("synthetic networks need an explicit --budget");
    }
    config.resolved_budget()
}

pub fn network_summary(net: &DirectedSocialNetwork) -> String {
    let kind = if net.is_directed() {
        "edges"
    } else {
        "undirected edges"
    };
    format!(
        "{} nodes, {} {kind}, avg degree {:.1}",
        net.node_count(),
        net.reported_edge_count(),
        net.average_degree()
    )
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_config(config: &ExperimentConfig, name: &str) -> Result<()> {
    write_file(&config.out.join(name), &config.to_text())
}

fn snapshot_path(config: &ExperimentConfig) -> PathBuf {
    config
        .snapshot
        .clone()
        .unwrap_or_else(|| config.out.join(SNAPSHOT_FILE))
}

fn load_env(path: &Path, budget: Option<f64>) -> Result<Environment> {
    let mut env = Environment::load_snapshot(path)
        .with_context(|| format!("loading snapshot {}", path.display()))?;
    if let Some(b) = budget {
        env.set_budget(b)?;
    }
    Ok(env)
}

pub fn cmd_gen_env(config: &ExperimentConfig) -> Result<String> {
    let net = build_network(config)?;
    let summary = network_summary(&net);
    let budget = generation_budget(config)?;
    let env = Environment::generate(net, config.option_count, budget, config.seed_env)?;
    let mut resolved = config.clone();
    resolved.budget = Some(budget);
    let path = snapshot_path(&resolved);
    resolved.snapshot = Some(path.clone());
    write_file(&path, &env.snapshot())?;
    write_config(&resolved, "gen-env.config")?;
    Ok(summary)
}

pub fn cmd_train(config: &ExperimentConfig) -> Result<String> {
    let path = snapshot_path(config);
    let mut env = load_env(&path, config.budget)?;
    let mut train = config.train.clone();
    train.seed = config.seed_policy;
    let interval = train.checkpoint_interval;
    let outcome = train_with_progress(&train, &mut env, |row| {
        if row.episode % interval == 0 {
            eprintln!(
                "episode {}: reward {:.3}, engaged {}, mean spend {:.3}",
                row.episode, row.step_reward_sum, row.engaged_final, row.spent_mean
            );
        }
    })?;
    let ckpt = config.out.join(CHECKPOINT_FILE);
    write_file(&ckpt, &outcome.best.to_text())?;
    write_file(
        &config.out.join(TRAIN_LOG_FILE),
        &training_log_csv(&outcome.log),
    )?;
    let mut resolved = config.clone();
    resolved.snapshot = Some(path);
    resolved.budget = Some(env.budget());
    resolved.seed_env = env.seed();
    write_config(&resolved, "train.config")?;
    Ok(format!(
        "best checkpoint from episode {} (engaged {:.2}) written to {}",
        outcome.best_episode,
        outcome.best_score,
        ckpt.display()
    ))
}

/// A policy named on the command line.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicySpec {
    Baseline(Baseline),
    Trained { label: String, checkpoint: String },
}

impl PolicySpec {
    /// `none`, `uniform`, `ucb-pricing`, `gac` (uses `default_checkpoint`)
    /// or `LABEL=CHECKPOINT`.
    pub fn parse(spec: &str, default_checkpoint: Option<&str>) -> Result<Self> {
        if let Some((label, path)) = spec.split_once('=') {
            return Ok(PolicySpec::Trained {
                label: label.trim().to_string(),
                checkpoint: path.trim().to_string(),
            });
        }
        if let Ok(b) = spec.parse::<Baseline>() {
            return Ok(PolicySpec::Baseline(b));
        }
        if spec.parse::<Variant>().is_ok() {
            let checkpoint = default_checkpoint.ok_or_else(|| {
                anyhow!("policy '{spec}': no checkpoint given (use --checkpoint)")
            })?;
            return Ok(PolicySpec::Trained {
                label: spec.to_string(),
                checkpoint: checkpoint.to_string(),
            });
        }
        bail!("unknown policy '{spec}'")
    }

    pub fn label(&self) -> String {
        match self {
            PolicySpec::Baseline(b) => b.to_string(),
            PolicySpec::Trained { label, .. } => label.clone(),
        }
    }

    /// Instantiates the policy for `env`; `{seed}` in a checkpoint path is
    /// replaced by `seed`.
    pub fn instantiate(&self, env: &Environment, seed: u64) -> Result<Box<dyn IncentivePolicy>> {
        match self {
            PolicySpec::Baseline(b) => Ok(b.policy(env.node_count())),
            PolicySpec::Trained { label, checkpoint } => {
                let path = substitute_seed(checkpoint, seed);
                if !Path::new(&path).exists() {
                    bail!("policy '{label}': checkpoint {path} not found");
                }
                let ckpt = Checkpoint::load(&path)
                    .with_context(|| format!("policy '{label}': loading {path}"))?;
                let p = GacPolicy::from_checkpoint(&ckpt, env)
                    .with_context(|| format!("policy '{label}'"))?;
                Ok(Box::new(p))
            }
        }
    }
}

pub fn substitute_seed(pattern: &str, seed: u64) -> String {
    pattern.replace("{seed}", &seed.to_string())
}

pub fn cmd_eval(config: &ExperimentConfig) -> Result<String> {
    let spec = match (&config.checkpoint, &config.baseline) {
        (Some(_), Some(_)) => bail!("give either --checkpoint or --baseline, not both"),
        (Some(c), None) => PolicySpec::Trained {
            label: config.train.variant.to_string(),
            checkpoint: c.clone(),
        },
        (None, Some(b)) => PolicySpec::Baseline(b.parse()?),
        (None, None) => bail!("nothing to evaluate (use --checkpoint or --baseline)"),
    };
    let path = snapshot_path(config);
    let mut env = load_env(&path, config.budget)?;
    let mut policy = spec.instantiate(&env, env.seed())?;
    let rows = evaluate(policy.as_mut(), &mut env, config.eval_steps)?;
    let label = spec.label();
    write_file(
        &config.out.join(format!("eval_{label}.csv")),
        &evaluation_csv(&rows),
    )?;
    let mut resolved = config.clone();
    resolved.snapshot = Some(path);
    resolved.budget = Some(env.budget());
    resolved.seed_env = env.seed();
    write_config(&resolved, &format!("eval_{label}.config"))?;
    Ok(format!(
        "{label}: mean engaged over last {SUMMARY_WINDOW} steps {:.2}",
        tail_mean_engaged(&rows, SUMMARY_WINDOW)
    ))
}

/// One (policy, seed) rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub policy: String,
    pub seed: u64,
    pub steps: Vec<EvalStep>,
}

/// Environment for one comparison seed: a snapshot path containing
/// `{seed}`, else a fresh environment from the configured network, else
/// the single configured snapshot.
fn compare_env(config: &ExperimentConfig, seed: u64) -> Result<Environment> {
    match &config.snapshot {
        Some(p) if p.to_string_lossy().contains("{seed}") => load_env(
            Path::new(&substitute_seed(&p.to_string_lossy(), seed)),
            config.budget,
        ),
        _ if config.dataset.is_some() || config.synthetic.is_some() => {
            let c = ExperimentConfig {
                seed_env: seed,
                ..config.clone()
            };
            let budget = generation_budget(&c)?;
            Ok(Environment::generate(
                build_network(&c)?,
                c.option_count,
                budget,
                seed,
            )?)
        }
        _ => load_env(&snapshot_path(config), config.budget),
    }
}

/// Runs every policy on every seed. Rollouts are independent and run on
/// separate threads; results come back in (policy, seed) order.
pub fn rollouts(config: &ExperimentConfig) -> Result<Vec<Rollout>> {
    if config.policies.is_empty() {
        bail!("no policies to compare (use --policies)");
    }
    let specs = config
        .policies
        .iter()
        .map(|p| PolicySpec::parse(p, config.checkpoint.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let seeds = if config.seeds.is_empty() {
        vec![config.seed_env]
    } else {
        config.seeds.clone()
    };
    let jobs: Vec<(&PolicySpec, u64)> = specs
        .iter()
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let run_one = |spec: &PolicySpec, seed: u64| -> Result<Rollout> {
        let mut env = compare_env(config, seed)?;
        let mut policy = spec.instantiate(&env, seed)?;
        Ok(Rollout {
            policy: spec.label(),
            seed,
            steps: evaluate(policy.as_mut(), &mut env, config.eval_steps)?,
        })
    };
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(spec, seed)| scope.spawn(move || run_one(spec, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| anyhow!("rollout thread panicked"))?)
            .collect()
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Raw rows `policy,seed,step,engaged,spent,reward` followed by per-policy
/// per-step rows whose seed column is `mean` or `std` (population).
pub fn comparison_csv(rollouts: &[Rollout]) -> String {
    let mut out = String::from("policy,seed,step,engaged,spent,reward\n");
    for r in rollouts {
        for s in &r.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.policy, r.seed, s.step, s.engaged, s.spent, s.reward
            );
        }
    }
    let mut labels: Vec<&str> = Vec::new();
    for r in rollouts {
        if !labels.contains(&r.policy.as_str()) {
            labels.push(&r.policy);
        }
    }
    for label in labels {
        let group: Vec<&Rollout> = rollouts.iter().filter(|r| r.policy == label).collect();
        let steps = group.iter().map(|r| r.steps.len()).min().unwrap_or(0);
        let mut mean_rows = String::new();
        let mut std_rows = String::new();
        for i in 0..steps {
            let column = |f: &dyn Fn(&EvalStep) -> f64| {
                mean_std(&group.iter().map(|r| f(&r.steps[i])).collect::<Vec<_>>())
            };
            let (em, es) = column(&|s| s.engaged as f64);
            let (sm, ss) = column(&|s| s.spent);
            let (rm, rs) = column(&|s| s.reward);
            let step = group[0].steps[i].step;
            let _ = writeln!(mean_rows, "{label},mean,{step},{em},{sm},{rm}");
            let _ = writeln!(std_rows, "{label},std,{step},{es},{ss},{rs}");
        }
        out.push_str(&mean_rows);
        out.push_str(&std_rows);
    }
    out
}

pub fn cmd_compare(config: &ExperimentConfig) -> Result<String> {
    let results = rollouts(config)?;
    write_file(&config.out.join(COMPARE_FILE), &comparison_csv(&results))?;
    write_config(config, "compare.config")?;
    let mut summary = String::new();
    let mut seen: Vec<&str> = Vec::new();
    for r in &results {
        if seen.contains(&r.policy.as_str()) {
            continue;
        }
        seen.push(&r.policy);
        let tails: Vec<f64> = results
            .iter()
            .filter(|x| x.policy == r.policy)
            .map(|x| tail_mean_engaged(&x.steps, SUMMARY_WINDOW))
            .collect();
        let (m, s) = mean_std(&tails);
        let _ = writeln!(
            summary,
            "{}: mean engaged over last {SUMMARY_WINDOW} steps {m:.2} (std {s:.2}, {} seeds)",
            r.policy,
            tails.len()
        );
    }
    Ok(summary.trim_end().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(engaged: &[usize]) -> Vec<EvalStep> {
        engaged
            .iter()
            .enumerate()
            .map(|(i, &e)| EvalStep {
                step: i + 1,
                engaged: e,
                spent: 0.5,
                reward: 1.0,
            })
            .collect()
    }

    #[test]
    fn policy_specs() {
        assert_eq!(
            PolicySpec::parse("uniform", None).unwrap(),
            PolicySpec::Baseline(Baseline::Uniform)
        );
        assert_eq!(
            PolicySpec::parse("in=runs/{seed}/c.txt", None).unwrap(),
            PolicySpec::Trained {
                label: "in".into(),
                checkpoint: "runs/{seed}/c.txt".into()
            }
        );
        let err = PolicySpec::parse("gac", None).unwrap_err().to_string();
        assert!(err.contains("'gac'"));
        assert!(PolicySpec::parse("gac-out", Some("c.txt")).is_ok());
        assert!(PolicySpec::parse("random", None).is_err());
        assert_eq!(substitute_seed("a/{seed}/b", 7), "a/7/b");
    }

    #[test]
    fn aggregate_of_one_seed_equals_raw() {
        let r = vec![Rollout {
            policy: "uniform".into(),
            seed: 3,
            steps: steps(&[1, 2, 3]),
        }];
        let csv = comparison_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 6);
        assert_eq!(lines[1], "uniform,3,1,1,0.5,1");
        assert_eq!(lines[4], "uniform,mean,1,1,0.5,1");
        assert_eq!(lines[7], "uniform,std,1,0,0,0");
    }

    #[test]
    fn aggregate_mean_and_std() {
        let r = vec![
            Rollout {
                policy: "none".into(),
                seed: 1,
                steps: steps(&[2]),
            },
            Rollout {
                policy: "none".into(),
                seed: 2,
                steps: steps(&[4]),
            },
        ];
        let csv = comparison_csv(&r);
        assert!(csv.contains("none,mean,1,3,0.5,1\n"));
        assert!(csv.contains("none,std,1,1,0,0\n"));
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.config");
        fs::write(
            &file,
            "budget=5\nepisodes=7\nexploration_episodes=2\nsteps=3\n",
        )
        .unwrap();
        let args = CommonArgs {
            config: Some(file),
            budget: Some(2.0),
            steps: Some(9),
            overrides: vec!["tau=0.5".into()],
            ..CommonArgs::default()
        };
        let c = args.resolve("train").unwrap();
        assert_eq!(c.budget, Some(2.0));
        assert_eq!(c.train.episodes, 7);
        assert_eq!(c.train.steps_per_episode, 9);
        assert_eq!(c.train.updates.tau, 0.5);
        assert_eq!(c.command, "train");
        let e = CommonArgs {
            steps: Some(20),
            ..CommonArgs::default()
        }
        .resolve("eval")
        .unwrap();
        assert_eq!(e.eval_steps, 20);
    }
}
