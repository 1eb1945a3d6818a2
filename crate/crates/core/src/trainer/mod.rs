//! Twin-critic deterministic actor-critic training: replay buffer,
//! exploration noise, clipped double-Q targets, delayed actor updates,
//! soft target tracking, checkpoint selection and evaluation rollouts.

mod agent;
mod noise;
mod replay;
mod run;

pub use agent::{
    actor_from_checkpoint, actor_objective_and_grads, architecture_from_checkpoint,
    critic_loss_and_grads, td_target, Agent, Batch, UpdateSettings, NETWORK_NAMES,
};
pub use noise::{explore_action, NoiseMode};
pub use replay::{ReplayBuffer, Transition};
pub use run::{
    evaluate, evaluation_csv, stack_features, tail_mean_engaged, train, train_with_progress,
    training_log_csv, EpisodeLog, EvalStep, GacPolicy, TrainConfig, TrainOutcome,
};
