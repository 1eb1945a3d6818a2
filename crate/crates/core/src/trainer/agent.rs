use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::policy::{ActorNet, Architecture, CriticNet, GraphInput, Variant};
use crate::tensor::{Adam, Checkpoint, DenseMatrix, Gradients, ParamSet, Tape, Tensor, Var};

use super::replay::Transition;

/// Learning rates and update constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateSettings {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Std of the smoothing noise added to target actions.
    pub target_noise: f64,
    pub target_noise_clip: f64,
}

impl Default for UpdateSettings {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 1e-3,
            lr_actor: 3e-4,
            lr_critic: 3e-3,
            target_noise: 0.1,
            target_noise_clip: 0.5,
        }
    }
}

/// A sampled minibatch laid out as stacked tensors.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_features: Tensor,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("minibatch".into()));
        }
        let n = items[0].action.len();
        let mut actions = Vec::with_capacity(items.len() * n);
        for t in items {
            if t.action.len() != n {
                return Err(Error::invalid("transitions disagree on the user count"));
            }
            actions.extend_from_slice(&t.action);
        }
        Ok(Self {
            features: Tensor::stack(items.iter().map(|t| &t.features))?,
            actions: Tensor::from_vec(items.len(), 1, n, actions)?,
            rewards: items.iter().map(|t| t.reward).collect(),
            next_features: Tensor::stack(items.iter().map(|t| &t.next_features))?,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// `reward + gamma * min(q1, q2)`.
pub fn td_target(reward: f64, gamma: f64, q1: f64, q2: f64) -> f64 {
    reward + gamma * q1.min(q2)
}

fn param_grads(grads: &Gradients, vars: &[Var], params: &ParamSet) -> Vec<DenseMatrix> {
    vars.iter()
        .zip(params.values())
        .map(|(&v, m)| grads.matrix(v, m.rows(), m.cols()))
        .collect()
}

/// Summed mean squared TD error of both critics and the gradient with
/// respect to each critic's parameters.
pub fn critic_loss_and_grads(
    critics: [&CriticNet; 2],
    graph: &GraphInput,
    batch: &Batch,
    targets: &[f64],
) -> Result<(f64, [Vec<DenseMatrix>; 2])> {
    let mut tape = Tape::new();
    let f = tape.constant(batch.features.clone());
    let a = tape.constant(batch.actions.clone());
    let mut losses = Vec::with_capacity(2);
    let mut bound = Vec::with_capacity(2);
    for critic in critics {
        let vars = critic.params().bind(&mut tape, true);
        let q = critic.forward(&mut tape, &vars, graph, f, a)?;
        losses.push(tape.mse_to_const(q, targets)?);
        bound.push(vars);
    }
    let loss = tape.add(losses[0], losses[1])?;
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).as_slice()[0];
    Ok((
        value,
        [
            param_grads(&grads, &bound[0], critics[0].params()),
            param_grads(&grads, &bound[1], critics[1].params()),
        ],
    ))
}

/// Negated mean `Q1(s, actor(s))` and its gradient for the actor
/// parameters; the critic is held fixed.
pub fn actor_objective_and_grads(
    actor: &ActorNet,
    critic: &CriticNet,
    graph: &GraphInput,
    features: &Tensor,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let mut tape = Tape::new();
    let actor_vars = actor.params().bind(&mut tape, true);
    let critic_vars = critic.params().bind(&mut tape, false);
    let f = tape.constant(features.clone());
    let action = actor.forward(&mut tape, &actor_vars, graph, f)?;
    let q = critic.forward(&mut tape, &critic_vars, graph, f, action)?;
    let objective = tape.mean(q);
    let loss = tape.scale(objective, -1.0);
    let grads = tape.backward(loss)?;
    Ok((
        tape.value(objective).as_slice()[0],
        param_grads(&grads, &actor_vars, actor.params()),
    ))
}

fn critic_values(
    critic: &CriticNet,
    graph: &GraphInput,
    features: &Tensor,
    actions: &Tensor,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = critic.params().bind(&mut tape, false);
    let f = tape.constant(features.clone());
    let a = tape.constant(actions.clone());
    let q = critic.forward(&mut tape, &vars, graph, f, a)?;
    Ok(tape.value(q).as_slice().to_vec())
}

/// Actor, twin critics, their target copies and optimiser state.
#[derive(Clone, Debug)]
pub struct Agent {
    pub actor: ActorNet,
    pub actor_target: ActorNet,
    pub critics: [CriticNet; 2],
    pub critic_targets: [CriticNet; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    settings: UpdateSettings,
}

/// Names of the six networks inside a checkpoint.
pub const NETWORK_NAMES: [&str; 6] = [
    "actor",
    "critic1",
    "critic2",
    "actor_target",
    "critic1_target",
    "critic2_target",
];

impl Agent {
    /// Fresh networks; targets start as exact copies.
    pub fn new<R: Rng + ?Sized>(
        arch: Architecture,
        settings: UpdateSettings,
        rng: &mut R,
    ) -> Result<Self> {
        let actor = ActorNet::new(arch, rng)?;
        let critics = [CriticNet::new(arch, rng)?, CriticNet::new(arch, rng)?];
        Ok(Self {
            actor_opt: Adam::new(actor.params(), settings.lr_actor),
            critic_opts: [
                Adam::new(critics[0].params(), settings.lr_critic),
                Adam::new(critics[1].params(), settings.lr_critic),
            ],
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            settings,
        })
    }

    pub fn settings(&self) -> &UpdateSettings {
        &self.settings
    }

    pub fn architecture(&self) -> &Architecture {
        self.actor.architecture()
    }

    /// Smoothed target-policy action, then `r + gamma * min(Q1', Q2')` per
    /// sample.
    pub fn target_q<R: Rng + ?Sized>(
        &self,
        graph: &GraphInput,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut next_actions = self.actor_target.act_batch(graph, &batch.next_features)?;
        let s = &self.settings;
        if s.target_noise > 0.0 {
            let d = Normal::new(0.0, s.target_noise).map_err(|e| Error::invalid(e.to_string()))?;
            for a in next_actions.as_mut_slice() {
                let eps = d
                    .sample(rng)
                    .clamp(-s.target_noise_clip, s.target_noise_clip);
                *a = (*a + eps).clamp(-1.0, 1.0);
            }
        }
        let q1 = critic_values(
            &self.critic_targets[0],
            graph,
            &batch.next_features,
            &next_actions,
        )?;
        let q2 = critic_values(
            &self.critic_targets[1],
            graph,
            &batch.next_features,
            &next_actions,
        )?;
        Ok(batch
            .rewards
            .iter()
            .zip(q1.iter().zip(&q2))
            .map(|(&r, (&a, &b))| td_target(r, s.gamma, a, b))
            .collect())
    }

    /// One Adam step on both critics toward `targets`; returns the summed
    /// loss before the step.
    pub fn critic_step(
        &mut self,
        graph: &GraphInput,
        batch: &Batch,
        targets: &[f64],
    ) -> Result<f64> {
        let (loss, grads) =
            critic_loss_and_grads([&self.critics[0], &self.critics[1]], graph, batch, targets)?;
        for ((critic, opt), g) in self
            .critics
            .iter_mut()
            .zip(&mut self.critic_opts)
            .zip(grads)
        {
            opt.step(critic.params_mut(), &g)?;
        }
        Ok(loss)
    }

    pub fn critic_update<R: Rng + ?Sized>(
        &mut self,
        graph: &GraphInput,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<f64> {
        let targets = self.target_q(graph, batch, rng)?;
        self.critic_step(graph, batch, &targets)
    }

    /// One ascent step on mean `Q1(s, actor(s))`; returns the objective
    /// before the step.
    pub fn actor_update(&mut self, graph: &GraphInput, features: &Tensor) -> Result<f64> {
        let (objective, grads) =
            actor_objective_and_grads(&self.actor, &self.critics[0], graph, features)?;
        self.actor_opt.step(self.actor.params_mut(), &grads)?;
        Ok(objective)
    }

    /// Actor step plus target refresh, but only when `step` is a multiple
    /// of `update_frequency`.
    pub fn delayed_update(
        &mut self,
        step: usize,
        update_frequency: usize,
        graph: &GraphInput,
        features: &Tensor,
    ) -> Result<Option<f64>> {
        if update_frequency == 0 || !step.is_multiple_of(update_frequency) {
            return Ok(None);
        }
        let objective = self.actor_update(graph, features)?;
        self.soft_update(self.settings.tau)?;
        Ok(Some(objective))
    }

    /// `target <- tau * main + (1 - tau) * target` for all three pairs.
    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        self.actor_target
            .params_mut()
            .soft_update_from(self.actor.params(), tau)?;
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            t.params_mut().soft_update_from(c.params(), tau)?;
        }
        Ok(())
    }

    fn networks(&self) -> [&ParamSet; 6] {
        [
            self.actor.params(),
            self.critics[0].params(),
            self.critics[1].params(),
            self.actor_target.params(),
            self.critic_targets[0].params(),
            self.critic_targets[1].params(),
        ]
    }

    fn networks_mut(&mut self) -> [&mut ParamSet; 6] {
        let [c1, c2] = &mut self.critics;
        let [t1, t2] = &mut self.critic_targets;
        [
            self.actor.params_mut(),
            c1.params_mut(),
            c2.params_mut(),
            self.actor_target.params_mut(),
            t1.params_mut(),
            t2.params_mut(),
        ]
    }

    /// All six networks, with the architecture in the metadata.
    pub fn to_checkpoint(&self, extra_meta: &[(String, String)]) -> Checkpoint {
        let arch = self.architecture();
        let mut meta = vec![
            ("node_count".to_string(), arch.node_count.to_string()),
            ("feature_width".to_string(), arch.feature_width.to_string()),
            ("embed_dim".to_string(), arch.embed_dim.to_string()),
            ("clusters".to_string(), arch.clusters.to_string()),
            ("hidden".to_string(), arch.hidden.to_string()),
            ("variant".to_string(), arch.variant.to_string()),
        ];
        meta.extend_from_slice(extra_meta);
        let mut entries = Vec::new();
        for (net, params) in NETWORK_NAMES.iter().zip(self.networks()) {
            for (name, m) in params.iter() {
                entries.push((format!("{net}/{name}"), m.clone()));
            }
        }
        Checkpoint { meta, entries }
    }

    /// Rebuilds an agent from a checkpoint. Optimiser state starts fresh.
    pub fn from_checkpoint<R: Rng + ?Sized>(
        ckpt: &Checkpoint,
        settings: UpdateSettings,
        rng: &mut R,
    ) -> Result<Self> {
        let arch = architecture_from_checkpoint(ckpt)?;
        let mut agent = Self::new(arch, settings, rng)?;
        for (net, params) in NETWORK_NAMES.iter().zip(agent.networks_mut()) {
            let prefix = format!("{net}/");
            params.load_named(
                ckpt.entries
                    .iter()
                    .filter_map(|(n, m)| n.strip_prefix(&prefix).map(|local| (local, m))),
            )?;
        }
        Ok(agent)
    }
}

/// Reads the network layout recorded by [`Agent::to_checkpoint`].
pub fn architecture_from_checkpoint(ckpt: &Checkpoint) -> Result<Architecture> {
    let get = |key: &str| {
        ckpt.meta_value(key)
            .ok_or_else(|| Error::format("checkpoint", format!("missing meta '{key}'")))
    };
    let num = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::format("checkpoint", format!("meta '{key}' is not an integer")))
    };
    Ok(Architecture {
        node_count: num("node_count")?,
        feature_width: num("feature_width")?,
        embed_dim: num("embed_dim")?,
        clusters: num("clusters")?,
        hidden: num("hidden")?,
        variant: get("variant")?.parse::<Variant>()?,
    })
}

/// Loads only the actor from a checkpoint.
pub fn actor_from_checkpoint(ckpt: &Checkpoint) -> Result<ActorNet> {
    let arch = architecture_from_checkpoint(ckpt)?;
    // Values are overwritten below; the seed only fixes the layout.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut actor = ActorNet::new(arch, &mut rng)?;
    actor.params_mut().load_named(
        ckpt.entries
            .iter()
            .filter_map(|(n, m)| n.strip_prefix("actor/").map(|local| (local, m))),
    )?;
    Ok(actor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_connected_undirected;
    use crate::simenv::Environment;

    fn arch() -> Architecture {
        Architecture {
            embed_dim: 8,
            clusters: 4,
            hidden: 16,
            ..Architecture::new(8, 5, Variant::Gac)
        }
    }

    fn setup(seed: u64) -> (GraphInput, Vec<Transition>) {
        let mut env = Environment::generate(
            random_connected_undirected(8, 12, seed).unwrap(),
            4,
            2.0,
            seed,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = env.reset();
        let graph = GraphInput::new(&state.adjacency);
        let mut out = Vec::new();
        for _ in 0..6 {
            let action: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let (log, next) = env.step(&crate::policy::rescale_action(&action)).unwrap();
            out.push(Transition {
                features: state.features.clone(),
                action,
                reward: log.step_reward,
                next_features: next.features.clone(),
            });
            state = next;
        }
        (graph, out)
    }

    #[test]
    fn td_target_hand_values() {
        assert_eq!(td_target(2.0, 0.99, 1.0, 0.8), 2.0 + 0.99 * 0.8);
        assert!((td_target(2.0, 0.99, 1.0, 0.8) - 2.792).abs() < 1e-15);
        assert_eq!(td_target(1.5, 0.0, 7.0, -3.0), 1.5);
        assert_eq!(td_target(1.0, 0.5, 0.4, 0.4), 1.2);
    }

    #[test]
    fn zero_discount_target_is_reward() {
        let (graph, items) = setup(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let settings = UpdateSettings {
            gamma: 0.0,
            ..UpdateSettings::default()
        };
        let agent = Agent::new(arch(), settings, &mut rng).unwrap();
        let refs: Vec<&Transition> = items.iter().collect();
        let batch = Batch::from_transitions(&refs).unwrap();
        assert_eq!(
            agent.target_q(&graph, &batch, &mut rng).unwrap(),
            batch.rewards
        );
    }

    #[test]
    fn targets_start_equal_to_mains() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = Agent::new(arch(), UpdateSettings::default(), &mut rng).unwrap();
        assert_eq!(agent.actor.params(), agent.actor_target.params());
        assert_eq!(agent.critics[0].params(), agent.critic_targets[0].params());
        assert_eq!(agent.critics[1].params(), agent.critic_targets[1].params());
        assert_ne!(agent.critics[0].params(), agent.critics[1].params());
    }

    #[test]
    fn single_sample_loss_by_hand() {
        let (graph, items) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let agent = Agent::new(arch(), UpdateSettings::default(), &mut rng).unwrap();
        let batch = Batch::from_transitions(&[&items[0]]).unwrap();
        let q1 = agent.critics[0]
            .q_value(&graph, &items[0].features, &items[0].action)
            .unwrap();
        let q2 = agent.critics[1]
            .q_value(&graph, &items[0].features, &items[0].action)
            .unwrap();
        let y = 1.25;
        let (loss, _) =
            critic_loss_and_grads([&agent.critics[0], &agent.critics[1]], &graph, &batch, &[y])
                .unwrap();
        let expected = (y - q1).powi(2) + (y - q2).powi(2);
        assert!((loss - expected).abs() < 1e-12 * expected.max(1.0));

        // Targets equal to the critics' own outputs give zero loss and gradient.
        let critic = &agent.critics[0];
        let (loss, grads) = critic_loss_and_grads([critic, critic], &graph, &batch, &[q1]).unwrap();
        assert!(loss.abs() < 1e-24);
        assert!(grads[0]
            .iter()
            .all(|g| g.as_slice().iter().all(|v| v.abs() < 1e-10)));
    }

    #[test]
    fn critic_loss_decreases_on_frozen_batch() {
        let (graph, items) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut agent = Agent::new(arch(), UpdateSettings::default(), &mut rng).unwrap();
        let refs: Vec<&Transition> = items.iter().collect();
        let batch = Batch::from_transitions(&refs).unwrap();
        let targets = agent.target_q(&graph, &batch, &mut rng).unwrap();
        let mut losses = Vec::new();
        for _ in 0..100 {
            losses.push(agent.critic_step(&graph, &batch, &targets).unwrap());
        }
        let first: f64 = losses[..10].iter().sum();
        let last: f64 = losses[90..].iter().sum();
        assert!(last < 0.1 * first, "{first} -> {last}");
        assert!(losses[99] < losses[0]);
    }

    #[test]
    fn actor_improves_q_and_leaves_critics_alone() {
        let (graph, items) = setup(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agent = Agent::new(arch(), UpdateSettings::default(), &mut rng).unwrap();
        let refs: Vec<&Transition> = items.iter().collect();
        let batch = Batch::from_transitions(&refs).unwrap();
        let critics_before = agent.critics.clone();
        let mut objectives = Vec::new();
        for _ in 0..50 {
            objectives.push(agent.actor_update(&graph, &batch.features).unwrap());
        }
        assert_eq!(agent.critics, critics_before);
        assert!(objectives[49] > objectives[0], "{objectives:?}");
        let first: f64 = objectives[..5].iter().sum();
        let last: f64 = objectives[45..].iter().sum();
        assert!(last >= first);
    }

    #[test]
    fn zero_critic_gives_zero_actor_gradient() {
        let (graph, items) = setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut agent = Agent::new(arch(), UpdateSettings::default(), &mut rng).unwrap();
        for m in agent.critics[0].params_mut().values_mut() {
            *m = DenseMatrix::zeros(m.rows(), m.cols());
        }
        let f = Tensor::from(&items[0].features);
        let (_, grads) =
            actor_objective_and_grads(&agent.actor, &agent.critics[0], &graph, &f).unwrap();
        assert!(grads.iter().all(|g| g.as_slice().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn delayed_update_skips_off_cycle_steps() {
        let (graph, items) = setup(7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut agent = Agent::new(arch(), UpdateSettings::default(), &mut rng).unwrap();
        let f = Tensor::from(&items[0].features);
        let before = agent.actor.clone();
        assert_eq!(agent.delayed_update(3, 2, &graph, &f).unwrap(), None);
        assert_eq!(agent.actor, before);
        assert!(agent.delayed_update(4, 2, &graph, &f).unwrap().is_some());
        assert_ne!(agent.actor, before);
        assert_ne!(agent.actor_target.params(), before.params());
    }

    #[test]
    fn soft_update_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut agent = Agent::new(arch(), UpdateSettings::default(), &mut rng).unwrap();
        agent.critics[0] = CriticNet::new(arch(), &mut rng).unwrap();
        let target_before = agent.critic_targets[0].clone();
        agent.soft_update(0.0).unwrap();
        assert_eq!(agent.critic_targets[0], target_before);
        agent.soft_update(1.0).unwrap();
        assert_eq!(agent.critic_targets[0].params(), agent.critics[0].params());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut agent = Agent::new(arch(), UpdateSettings::default(), &mut rng).unwrap();
        agent.soft_update(0.5).unwrap();
        agent.critics[1] = CriticNet::new(arch(), &mut rng).unwrap();
        let ckpt = agent.to_checkpoint(&[("seed".into(), "9".into())]);
        let text = ckpt.to_text();
        let parsed = Checkpoint::parse(&text).unwrap();
        let back = Agent::from_checkpoint(&parsed, UpdateSettings::default(), &mut rng).unwrap();
        assert_eq!(back.actor, agent.actor);
        assert_eq!(back.critics, agent.critics);
        assert_eq!(back.critic_targets, agent.critic_targets);
        assert_eq!(actor_from_checkpoint(&parsed).unwrap(), agent.actor);
        assert_eq!(
            parsed.entries.len(),
            2 * agent.actor.params().len() + 4 * agent.critics[0].params().len()
        );
    }
}
