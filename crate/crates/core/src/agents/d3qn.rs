use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{masked_argmax, select_action, Experience, Policy, ReplayMemory, TrainConfig};
use crate::error::{Result, SimError};
use crate::mdp::{ActionTable, GatewayEnv, NetworkState};
use crate::neural::{adam_step, Architecture, OptimizerState, QNetwork, Sample};
use crate::scalar::Scalar;

/// Double-Q targets: the online network picks the next action among the
/// feasible ones, the target network scores it.
pub fn d3qn_target<T: Scalar>(
    batch: &[&Experience<T>],
    online: &QNetwork<T>,
    target: &QNetwork<T>,
    discount: T,
    table: &ActionTable,
) -> Result<Vec<T>> {
    batch
        .iter()
        .map(|e| {
            let mask = table.mask_for_busy(e.next_busy);
            let chosen = masked_argmax(&online.forward(&e.next_state)?, mask).ok_or(SimError::EmptyMask)?;
            Ok(e.reward + discount * target.q_value(&e.next_state, chosen)?)
        })
        .collect()
}

/// Single-network targets `r + γ max_a' Q(s', a')` over feasible actions.
pub fn max_target<T: Scalar>(
    batch: &[&Experience<T>],
    net: &QNetwork<T>,
    discount: T,
    table: &ActionTable,
) -> Result<Vec<T>> {
    batch
        .iter()
        .map(|e| {
            let q = net.forward(&e.next_state)?;
            let mask = table.mask_for_busy(e.next_busy);
            let best = masked_argmax(&q, mask).ok_or(SimError::EmptyMask)?;
            Ok(e.reward + discount * q[best])
        })
        .collect()
}

/// Online and target dueling networks, optimizer state and replay memory.
#[derive(Debug, Clone)]
pub struct D3qnAgent<T> {
    pub online: QNetwork<T>,
    pub target: QNetwork<T>,
    pub optimizer: OptimizerState<T>,
    pub replay: ReplayMemory<T>,
    config: TrainConfig,
    train_steps: u64,
    rng: ChaCha8Rng,
}

impl<T: Scalar> D3qnAgent<T> {
    /// Fresh networks, with the target a copy of the online weights.
    pub fn new(inputs: usize, actions: usize, config: TrainConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let arch = Architecture {
            inputs,
            hidden: config.hidden.clone(),
            actions,
        };
        let online = QNetwork::new(arch, &mut rng);
        Ok(Self::from_network(online, config, rng))
    }

    pub fn from_network(online: QNetwork<T>, config: TrainConfig, rng: ChaCha8Rng) -> Self {
        D3qnAgent {
            target: online.clone(),
            optimizer: OptimizerState::for_network(&online, T::lit(config.learning_rate)),
            replay: ReplayMemory::new(config.replay_capacity),
            online,
            config,
            train_steps: 0,
            rng,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn act(&mut self, features: &[T], mask: &[bool], epsilon: f64) -> Result<usize> {
        // skip the forward pass when the draw explores anyway
        let mut probe = self.rng.clone();
        if rand::Rng::random::<f64>(&mut probe) < epsilon {
            let zeros = vec![T::zero(); mask.len()];
            return select_action(&zeros, mask, epsilon, &mut self.rng);
        }
        let q = self.online.forward(features)?;
        select_action(&q, mask, epsilon, &mut self.rng)
    }

    pub fn remember(&mut self, exp: Experience<T>) {
        self.replay.push(exp);
    }

    /// One gradient step on the batch-mean squared error against double-Q
    /// targets. Refreshes the target network every `target_sync` steps.
    pub fn train_on_batch(&mut self, batch: &[&Experience<T>], table: &ActionTable) -> Result<T> {
        let discount = T::lit(self.config.discount);
        let targets = d3qn_target(batch, &self.online, &self.target, discount, table)?;
        let samples: Vec<Sample<'_, T>> = batch
            .iter()
            .zip(&targets)
            .map(|(e, &y)| Sample {
                input: &e.state,
                action: e.action,
                target: y,
            })
            .collect();
        let (grads, loss) = self.online.batch_gradient(&samples)?;
        adam_step(&mut self.online, &grads, &mut self.optimizer)?;
        self.train_steps += 1;
        if self.train_steps % self.config.target_sync == 0 {
            self.online.sync_into(&mut self.target)?;
        }
        Ok(loss)
    }

    /// Sample a minibatch from replay and train on it, once replay holds at
    /// least one batch. Returns the loss when a step was taken.
    pub fn train_step(&mut self, table: &ActionTable) -> Result<Option<T>> {
        if self.replay.len() < self.config.batch_size {
            return Ok(None);
        }
        let replay = std::mem::replace(&mut self.replay, ReplayMemory::new(0));
        let batch = replay.sample(self.config.batch_size, &mut self.rng);
        let out = self.train_on_batch(&batch, table);
        self.replay = replay;
        out.map(Some)
    }

    /// Greedy evaluation wrapper around a copy of the online network.
    pub fn greedy_policy(&self) -> GreedyPolicy<T> {
        GreedyPolicy::new(self.online.clone())
    }
}

/// Acts greedily (epsilon 0) on a fixed network.
#[derive(Debug, Clone)]
pub struct GreedyPolicy<T> {
    net: QNetwork<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> GreedyPolicy<T> {
    pub fn new(net: QNetwork<T>) -> Self {
        GreedyPolicy {
            net,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn network(&self) -> &QNetwork<T> {
        &self.net
    }
}

impl<T: Scalar> Policy for GreedyPolicy<T> {
    fn name(&self) -> &'static str {
        "d3qn"
    }

    fn select(&mut self, env: &GatewayEnv, state: &NetworkState) -> Result<usize> {
        if self.net.architecture().actions != env.table().len()
            || self.net.architecture().inputs != env.feature_width()
        {
            return Err(SimError::ArchitectureMismatch(format!(
                "network {:?} does not match environment ({} features, {} actions)",
                self.net.architecture(),
                env.feature_width(),
                env.table().len()
            )));
        }
        let q = self.net.forward(&env.encode::<T>(state))?;
        select_action(&q, env.table().mask_for_busy(state.busy_slots), 0.0, &mut self.rng)
    }
}
