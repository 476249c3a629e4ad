use std::collections::HashMap;
use std::hash::Hash;

use super::{masked_argmax, Policy};
use crate::error::{Result, SimError};
use crate::mdp::{GatewayEnv, NetworkState};

/// Lookup-table action values, created lazily at zero.
#[derive(Debug, Clone)]
pub struct QTable<K> {
    values: HashMap<K, Vec<f64>>,
    actions: usize,
}

impl<K: Hash + Eq + Clone> QTable<K> {
    pub fn new(actions: usize) -> Self {
        QTable {
            values: HashMap::new(),
            actions,
        }
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    /// Number of states visited so far.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, state: &K, action: usize) -> f64 {
        self.values.get(state).map_or(0.0, |row| row[action])
    }

    pub fn row(&self, state: &K) -> Option<&[f64]> {
        self.values.get(state).map(Vec::as_slice)
    }

    /// `Q(s,a) += α (r + γ max_{a' feasible} Q(s',a') - Q(s,a))`.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        state: &K,
        action: usize,
        reward: f64,
        next_state: &K,
        next_mask: &[bool],
        learning_rate: f64,
        discount: f64,
    ) {
        let next_best = self
            .values
            .get(next_state)
            .and_then(|row| masked_argmax(row, next_mask).map(|a| row[a]))
            .unwrap_or(0.0);
        let actions = self.actions;
        let q = &mut self.values.entry(state.clone()).or_insert_with(|| vec![0.0; actions])[action];
        *q += learning_rate * (reward + discount * next_best - *q);
    }

    /// Greedy feasible action; unvisited states resolve to the lowest
    /// feasible index.
    pub fn greedy(&self, state: &K, mask: &[bool]) -> Result<usize> {
        let zeros;
        let row = match self.values.get(state) {
            Some(r) => r.as_slice(),
            None => {
                zeros = vec![0.0; self.actions];
                zeros.as_slice()
            }
        };
        masked_argmax(row, mask).ok_or(SimError::EmptyMask)
    }
}

/// Greedy evaluation of a table keyed by [`NetworkState::key`].
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    table: QTable<Vec<u32>>,
}

impl TabularPolicy {
    pub fn new(table: QTable<Vec<u32>>) -> Self {
        TabularPolicy { table }
    }
}

impl Policy for TabularPolicy {
    fn name(&self) -> &'static str {
        "qlearning"
    }

    fn select(&mut self, env: &GatewayEnv, state: &NetworkState) -> Result<usize> {
        self.table.greedy(&state.key(), env.table().mask_for_busy(state.busy_slots))
    }
}
