//! Decision policies: the dueling double-Q learner, a tabular Q-learner, and
//! fixed heuristic baselines.

mod baselines;
mod d3qn;
mod qlearning;
mod replay;

pub use baselines::{
    backscatter_allocation, backscatter_policy, equal_split, fee_estimate_last_block,
    htt_allocation, htt_policy, random_policy, BackscatterPolicy, FeeChoice, HttPolicy,
    RandomPolicy,
};
pub use d3qn::{d3qn_target, max_target, D3qnAgent, GreedyPolicy};
pub use qlearning::{QTable, TabularPolicy};
pub use replay::{Experience, ReplayMemory};

use rand::Rng;

use crate::error::{Result, SimError};
use crate::mdp::{GatewayEnv, NetworkState};
use crate::scalar::Scalar;

/// Hyperparameters shared by the learners.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub batch_size: usize,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Target network refresh period, in training steps.
    pub target_sync: u64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    /// Step size of the tabular learner.
    pub q_learning_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 50_000,
            steps_per_episode: 200,
            batch_size: 32,
            discount: 0.9,
            epsilon_start: 0.9,
            epsilon_end: 0.0,
            target_sync: 10_000,
            learning_rate: 0.001,
            replay_capacity: 50_000,
            q_learning_rate: 0.1,
            hidden: vec![32, 32, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon must lie in [0, 1]");
            }
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad("need 0 < batch_size <= replay_capacity");
        }
        if self.target_sync == 0 {
            return bad("target_sync must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.q_learning_rate) {
            return bad("q_learning_rate must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
}

/// Linear interpolation from `start` (step 0) to `end` (step `total`).
pub fn epsilon_at(step: usize, total: usize, schedule: EpsilonSchedule) -> f64 {
    if total == 0 {
        return schedule.end;
    }
    let frac = step.min(total) as f64 / total as f64;
    schedule.start + (schedule.end - schedule.start) * frac
}

/// Index of the largest feasible value; ties go to the lowest index.
pub fn masked_argmax<T: Scalar>(values: &[T], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Epsilon-greedy choice restricted to feasible actions.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    values: &[T],
    mask: &[bool],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let feasible = mask.iter().filter(|&&m| m).count();
    if feasible == 0 {
        return Err(SimError::EmptyMask);
    }
    if rng.random::<f64>() < epsilon {
        let k = rng.random_range(0..feasible);
        return Ok(mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .nth(k)
            .map(|(i, _)| i)
            .expect("k < feasible"));
    }
    masked_argmax(values, mask).ok_or(SimError::EmptyMask)
}

/// Anything that picks an action index for the current state.
pub trait Policy {
    fn name(&self) -> &'static str;
    fn select(&mut self, env: &GatewayEnv, state: &NetworkState) -> Result<usize>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = [1.0, 5.0, 3.0];
        assert_eq!(select_action(&q, &[true; 3], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&q, &[true, false, true], 0.0, &mut rng).unwrap(), 2);
        assert_eq!(select_action(&[2.0, 2.0, 1.0], &[true; 3], 0.0, &mut rng).unwrap(), 0);
        assert!(matches!(
            select_action(&q, &[false; 3], 0.5, &mut rng),
            Err(SimError::EmptyMask)
        ));
    }

    #[test]
    fn full_exploration_is_uniform_over_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = [9.0, 0.0, 1.0, 2.0, 3.0];
        let mask = [true, false, true, true, true];
        let draws = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[select_action(&q, &mask, 1.0, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[1], 0);
        for &c in &[counts[0], counts[2], counts[3], counts[4]] {
            let f = c as f64 / draws as f64;
            assert!((f - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule() {
        let s = EpsilonSchedule { start: 0.9, end: 0.0 };
        assert_eq!(epsilon_at(0, 100, s), 0.9);
        assert_eq!(epsilon_at(100, 100, s), 0.0);
        assert!((epsilon_at(50, 100, s) - 0.45).abs() < 1e-12);
        assert_eq!(epsilon_at(500, 100, s), 0.0);
    }
}
