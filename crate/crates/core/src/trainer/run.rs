use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::IncentivePolicy;
use crate::error::{Error, Result};
use crate::policy::{rescale_action, ActorNet, Architecture, GraphInput, Variant};
use crate::simenv::{EnvState, Environment};
use crate::tensor::{Checkpoint, Tensor};

use super::agent::{actor_from_checkpoint, Agent, Batch, UpdateSettings};
use super::noise::{explore_action, NoiseMode};
use super::replay::{ReplayBuffer, Transition};

/// Training hyperparameters. Defaults follow the reference settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub exploration_episodes: usize,
    /// Actor and target networks update every this many steps.
    pub update_frequency: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub updates: UpdateSettings,
    pub noise: NoiseMode,
    pub variant: Variant,
    pub embed_dim: usize,
    pub clusters: usize,
    pub hidden: usize,
    /// Episodes between greedy checkpoint evaluations.
    pub checkpoint_interval: usize,
    pub checkpoint_eval_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            steps_per_episode: 10,
            exploration_episodes: 1_000,
            update_frequency: 2,
            batch_size: 256,
            buffer_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            updates: UpdateSettings::default(),
            noise: NoiseMode::Adaptive,
            variant: Variant::Gac,
            embed_dim: Architecture::DEFAULT_EMBED_DIM,
            clusters: Architecture::DEFAULT_CLUSTERS,
            hidden: Architecture::DEFAULT_HIDDEN,
            checkpoint_interval: 100,
            checkpoint_eval_steps: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episodes", self.episodes),
            ("steps_per_episode", self.steps_per_episode),
            ("update_frequency", self.update_frequency),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("embed_dim", self.embed_dim),
            ("clusters", self.clusters),
            ("hidden", self.hidden),
            ("checkpoint_interval", self.checkpoint_interval),
            ("checkpoint_eval_steps", self.checkpoint_eval_steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.exploration_episodes > self.episodes {
            return Err(Error::invalid(format!(
                "exploration_episodes ({}) exceeds episodes ({})",
                self.exploration_episodes, self.episodes
            )));
        }
        let u = &self.updates;
        if !(u.gamma >= 0.0 && u.gamma <= 1.0) || !(u.tau >= 0.0 && u.tau <= 1.0) {
            return Err(Error::invalid("gamma and tau must lie in [0, 1]"));
        }
        if !(u.lr_actor > 0.0 && u.lr_critic > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(())
    }

    pub fn architecture(&self, env: &Environment) -> Architecture {
        Architecture {
            embed_dim: self.embed_dim,
            clusters: self.clusters,
            hidden: self.hidden,
            ..Architecture::new(env.node_count(), env.feature_width(), self.variant)
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub step_reward_sum: f64,
    /// Engaged users after the episode's last step.
    pub engaged_final: usize,
    pub spent_mean: f64,
}

/// One row of an evaluation rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStep {
    pub step: usize,
    pub engaged: usize,
    pub spent: f64,
    pub reward: f64,
}

pub struct TrainOutcome {
    /// Networks with the best greedy engagement seen at a checkpoint.
    pub best: Checkpoint,
    pub best_score: f64,
    pub best_episode: usize,
    pub log: Vec<EpisodeLog>,
    pub agent: Agent,
}

/// Greedy policy driven by a trained actor.
#[derive(Clone, Debug)]
pub struct GacPolicy {
    actor: ActorNet,
    graph: GraphInput,
}

impl GacPolicy {
    pub fn new(actor: ActorNet, env: &Environment) -> Result<Self> {
        let arch = actor.architecture();
        if arch.node_count != env.node_count() || arch.feature_width != env.feature_width() {
            return Err(Error::invalid(format!(
                "checkpoint expects {} users with {} features, environment has {} users with {}",
                arch.node_count,
                arch.feature_width,
                env.node_count(),
                env.feature_width()
            )));
        }
        Ok(Self {
            actor,
            graph: GraphInput::new(env.adjacency()),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, env: &Environment) -> Result<Self> {
        Self::new(actor_from_checkpoint(ckpt)?, env)
    }
}

impl IncentivePolicy for GacPolicy {
    fn name(&self) -> &str {
        "gac"
    }

    fn act(&mut self, state: &EnvState, _budget: f64) -> Result<Vec<f64>> {
        Ok(rescale_action(
            &self.actor.act(&self.graph, &state.features)?,
        ))
    }
}

/// Resets `env` and runs `steps` rounds of `policy`. The budget is
/// refilled at every step.
pub fn evaluate(
    policy: &mut dyn IncentivePolicy,
    env: &mut Environment,
    steps: usize,
) -> Result<Vec<EvalStep>> {
    let mut state = env.reset();
    let mut rows = Vec::with_capacity(steps);
    for step in 1..=steps {
        let action = policy.act(&state, env.budget())?;
        let (log, next) = env.step(&action)?;
        policy.observe(&log);
        rows.push(EvalStep {
            step,
            engaged: log.engaged_count(),
            spent: log.spent,
            reward: log.step_reward,
        });
        state = next;
    }
    Ok(rows)
}

/// Mean engaged count over the last `window` rows.
pub fn tail_mean_engaged(rows: &[EvalStep], window: usize) -> f64 {
    let tail = &rows[rows.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|r| r.engaged as f64).sum::<f64>() / tail.len() as f64
}

pub fn training_log_csv(rows: &[EpisodeLog]) -> String {
    let mut out = String::from("episode,step_reward_sum,engaged_final,spent_mean\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.episode, r.step_reward_sum, r.engaged_final, r.spent_mean
        );
    }
    out
}

pub fn evaluation_csv(rows: &[EvalStep]) -> String {
    let mut out = String::from("step,engaged,spent,reward\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.engaged, r.spent, r.reward);
    }
    out
}

/// Runs the full training loop: warm-up episodes with random actions,
/// then noisy actor actions with a critic update every step and delayed
/// actor/target updates. Every `checkpoint_interval` episodes (and after
/// the last one) the actor is evaluated greedily and the best networks
/// are kept; later checkpoints win ties.
pub fn train(config: &TrainConfig, env: &mut Environment) -> Result<TrainOutcome> {
    train_with_progress(config, env, |_| {})
}

pub fn train_with_progress(
    config: &TrainConfig,
    env: &mut Environment,
    mut progress: impl FnMut(&EpisodeLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arch = config.architecture(env);
    let mut agent = Agent::new(arch, config.updates, &mut rng)?;
    let graph = GraphInput::new(env.adjacency());
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let n = env.node_count();
    let meta = vec![
        ("seed_policy".to_string(), config.seed.to_string()),
        ("seed_env".to_string(), env.seed().to_string()),
    ];

    let mut log = Vec::with_capacity(config.episodes);
    let mut best: Option<(f64, usize, Checkpoint)> = None;

    for episode in 1..=config.episodes {
        let mut state = env.reset();
        let mut omega = env.engaged_ratio();
        let mut reward_sum = 0.0;
        let mut spent_sum = 0.0;
        let mut engaged_final = 0;
        for t in 1..=config.steps_per_episode {
            let action = explore_action(
                episode,
                config.exploration_episodes,
                || agent.actor.act(&graph, &state.features),
                n,
                omega,
                config.noise,
                &mut rng,
            )?;
            let (step_log, next) = env.step(&rescale_action(&action))?;
            omega = step_log.engaged_ratio;
            reward_sum += step_log.step_reward;
            spent_sum += step_log.spent;
            engaged_final = step_log.engaged_count();
            buffer.push(Transition {
                features: state.features,
                action,
                reward: step_log.step_reward,
                next_features: next.features.clone(),
            });
            state = next;

            if episode > config.exploration_episodes {
                let batch = Batch::from_transitions(&buffer.sample(config.batch_size, &mut rng))?;
                agent.critic_update(&graph, &batch, &mut rng)?;
                agent.delayed_update(t, config.update_frequency, &graph, &batch.features)?;
            }
        }
        let row = EpisodeLog {
            episode,
            step_reward_sum: reward_sum,
            engaged_final,
            spent_mean: spent_sum / config.steps_per_episode as f64,
        };
        progress(&row);
        log.push(row);

        if episode % config.checkpoint_interval == 0 || episode == config.episodes {
            let mut policy = GacPolicy::new(agent.actor.clone(), env)?;
            let rows = evaluate(&mut policy, env, config.checkpoint_eval_steps)?;
            let score = tail_mean_engaged(&rows, rows.len());
            if best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
                let mut m = meta.clone();
                m.push(("episode".to_string(), episode.to_string()));
                best = Some((score, episode, agent.to_checkpoint(&m)));
            }
        }
    }

    let (best_score, best_episode, best) =
        best.expect("the final episode always records a checkpoint");
    Ok(TrainOutcome {
        best,
        best_score,
        best_episode,
        log,
        agent,
    })
}

/// Stacks feature matrices into a batch tensor.
pub fn stack_features(states: &[&EnvState]) -> Result<Tensor> {
    Tensor::stack(states.iter().map(|s| &s.features))
}
