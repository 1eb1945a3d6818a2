//! Reference incentive policies: nothing, an even split of the budget, and
//! a per-user UCB1 learner over a discrete price grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::simenv::{EnvState, StepLog, TARGET_OPTION};

/// Anything that maps an observed state to per-user incentives in `[0, 1]`.
pub trait IncentivePolicy {
    fn name(&self) -> &str;

    fn act(&mut self, state: &EnvState, budget: f64) -> Result<Vec<f64>>;

    /// Feedback after the environment applied the action.
    fn observe(&mut self, _log: &StepLog) {}
}

pub fn no_incentive(state: &EnvState) -> Vec<f64> {
    vec![0.0; state.features.rows()]
}

/// Every user is offered `min(budget / |V|, 1)`.
pub fn uniform(state: &EnvState, budget: f64) -> Vec<f64> {
    let n = state.features.rows();
    vec![(budget / n as f64).min(1.0); n]
}

/// Number of points on the price grid `{0.00, 0.01, ..., 1.00}`.
pub const PRICE_LEVELS: usize = 101;

pub fn price_of(arm: usize) -> f64 {
    arm as f64 / (PRICE_LEVELS - 1) as f64
}

/// Independent UCB1 learner per user. Arm reward is `1 - price` when the
/// user picked the target option and 0 otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct PricingBandit {
    exploration: f64,
    counts: Vec<[u64; PRICE_LEVELS]>,
    means: Vec<[f64; PRICE_LEVELS]>,
    pulls: Vec<u64>,
    last_arms: Option<Vec<usize>>,
}

impl PricingBandit {
    pub fn new(user_count: usize) -> Self {
        Self::with_exploration(user_count, std::f64::consts::SQRT_2)
    }

    pub fn with_exploration(user_count: usize, exploration: f64) -> Self {
        Self {
            exploration,
            counts: vec![[0; PRICE_LEVELS]; user_count],
            means: vec![[0.0; PRICE_LEVELS]; user_count],
            pulls: vec![0; user_count],
            last_arms: None,
        }
    }

    pub fn user_count(&self) -> usize {
        self.pulls.len()
    }

    pub fn counts(&self, user: usize) -> &[u64; PRICE_LEVELS] {
        &self.counts[user]
    }

    /// Arm for one user: the lowest untried arm, otherwise the highest
    /// upper confidence bound (ties to the lower price).
    pub fn select_arm(&self, user: usize) -> usize {
        let counts = &self.counts[user];
        if let Some(untried) = counts.iter().position(|&c| c == 0) {
            return untried;
        }
        let log_total = (self.pulls[user] as f64).ln();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (arm, (&n, &mean)) in counts.iter().zip(&self.means[user]).enumerate() {
            let score = mean + self.exploration * (log_total / n as f64).sqrt();
            if score > best_score {
                best_score = score;
                best = arm;
            }
        }
        best
    }

    pub fn select(&mut self) -> Vec<f64> {
        let arms: Vec<usize> = (0..self.user_count()).map(|u| self.select_arm(u)).collect();
        let prices = arms.iter().map(|&a| price_of(a)).collect();
        self.last_arms = Some(arms);
        prices
    }

    /// Credits each user's last selected arm with the observed outcome.
    pub fn learn(&mut self, behaviors: &[usize]) {
        let Some(arms) = self.last_arms.take() else {
            return;
        };
        for (user, (&arm, &b)) in arms.iter().zip(behaviors).enumerate() {
            let reward = if b == TARGET_OPTION {
                1.0 - price_of(arm)
            } else {
                0.0
            };
            self.counts[user][arm] += 1;
            self.pulls[user] += 1;
            let n = self.counts[user][arm] as f64;
            let m = &mut self.means[user][arm];
            *m += (reward - *m) / n;
        }
    }
}

/// The reference policies selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    None,
    Uniform,
    UcbPricing,
}

impl Baseline {
    pub fn policy(self, user_count: usize) -> Box<dyn IncentivePolicy> {
        match self {
            Baseline::None => Box::new(NoIncentive),
            Baseline::Uniform => Box::new(UniformSplit),
            Baseline::UcbPricing => Box::new(UcbPricing(PricingBandit::new(user_count))),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::None => "none",
            Baseline::Uniform => "uniform",
            Baseline::UcbPricing => "ucb-pricing",
        })
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Baseline::None),
            "uniform" => Ok(Baseline::Uniform),
            "ucb-pricing" => Ok(Baseline::UcbPricing),
            other => Err(Error::invalid(format!(
                "unknown baseline '{other}' (expected none, uniform or ucb-pricing)"
            ))),
        }
    }
}

struct NoIncentive;

impl IncentivePolicy for NoIncentive {
    fn name(&self) -> &str {
        "none"
    }

    fn act(&mut self, state: &EnvState, _budget: f64) -> Result<Vec<f64>> {
        Ok(no_incentive(state))
    }
}

struct UniformSplit;

impl IncentivePolicy for UniformSplit {
    fn name(&self) -> &str {
        "uniform"
    }

    fn act(&mut self, state: &EnvState, budget: f64) -> Result<Vec<f64>> {
        Ok(uniform(state, budget))
    }
}

struct UcbPricing(PricingBandit);

impl IncentivePolicy for UcbPricing {
    fn name(&self) -> &str {
        "ucb-pricing"
    }

    fn act(&mut self, state: &EnvState, _budget: f64) -> Result<Vec<f64>> {
        if state.features.rows() != self.0.user_count() {
            return Err(Error::invalid(format!(
                "bandit tracks {} users, state has {}",
                self.0.user_count(),
                state.features.rows()
            )));
        }
        Ok(self.0.select())
    }

    fn observe(&mut self, log: &StepLog) {
        self.0.learn(&log.behaviors);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_connected_undirected;
    use crate::simenv::Environment;

    fn state(n: usize) -> EnvState {
        let mut env =
            Environment::generate(random_connected_undirected(n, n, 0).unwrap(), 4, 1.0, 0)
                .unwrap();
        env.reset()
    }

    #[test]
    fn no_incentive_is_all_zero() {
        assert_eq!(no_incentive(&state(5)), vec![0.0; 5]);
    }

    #[test]
    fn uniform_split_and_cap() {
        let s = state(62);
        let a = uniform(&s, 3.0);
        assert!(a.iter().all(|&v| v == 3.0 / 62.0));
        assert!((a[0] - 0.048387).abs() < 1e-6);
        assert!(uniform(&s, 100.0).iter().all(|&v| v == 1.0));
        let total: f64 = uniform(&s, 10.0).iter().sum();
        assert!((total - 10.0).abs() < 1e-12);
    }

    #[test]
    fn first_offers_sweep_untried_arms() {
        let mut bandit = PricingBandit::new(2);
        for arm in 0..PRICE_LEVELS {
            let prices = bandit.select();
            assert_eq!(prices, vec![price_of(arm); 2]);
            bandit.learn(&[1, 1]);
        }
        assert!(bandit.counts(0).iter().all(|&c| c == 1));
    }

    #[test]
    fn always_accepting_user_converges_to_zero_price() {
        let mut bandit = PricingBandit::new(1);
        let mut pulls = [0usize; PRICE_LEVELS];
        for _ in 0..1000 {
            bandit.select();
            bandit.learn(&[TARGET_OPTION]);
        }
        for _ in 0..1000 {
            let arm = bandit.select_arm(0);
            pulls[arm] += 1;
            bandit.select();
            bandit.learn(&[TARGET_OPTION]);
        }
        let modal = (0..PRICE_LEVELS)
            .max_by_key(|&a| (pulls[a], std::cmp::Reverse(a)))
            .unwrap();
        assert_eq!(modal, 0);
        let total_modal = (0..PRICE_LEVELS)
            .max_by_key(|&a| bandit.counts(0)[a])
            .unwrap();
        assert_eq!(total_modal, 0);
    }

    #[test]
    fn prices_stay_on_grid() {
        let mut bandit = PricingBandit::new(3);
        for round in 0..400 {
            for p in bandit.select() {
                let k = (p * 100.0).round();
                assert!((0.0..=100.0).contains(&k));
                assert_eq!(price_of(k as usize), p);
            }
            bandit.learn(&[round % 2, 0, 1]);
        }
    }

    #[test]
    fn baseline_names_round_trip() {
        for b in [Baseline::None, Baseline::Uniform, Baseline::UcbPricing] {
            assert_eq!(b.to_string().parse::<Baseline>().unwrap(), b);
            assert_eq!(b.policy(4).name(), b.to_string());
        }
        assert!("dbp-ucb".parse::<Baseline>().is_err());
    }
}
