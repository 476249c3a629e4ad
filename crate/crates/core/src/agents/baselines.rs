use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Policy;
use crate::chain::{ChainConfig, Transaction};
use crate::error::{Result, SimError};
use crate::mdp::{Action, ActionTable, GatewayEnv, NetworkState};
use crate::radio::Allocation;

/// Split `total` into `n` parts differing by at most one; the remainder goes
/// to the lowest indices.
pub fn equal_split(total: u32, n: usize) -> Vec<u32> {
    if n == 0 {
        return Vec::new();
    }
    let (q, r) = (total / n as u32, total as usize % n);
    (0..n).map(|i| q + u32::from(i < r)).collect()
}

/// Harvest through the whole busy period, then share the idle slots for
/// active transmission.
pub fn htt_allocation(busy: u32, frame_slots: u32, n: usize) -> Allocation {
    Allocation {
        harvest: busy,
        backscatter: vec![0; n],
        active: equal_split(frame_slots.saturating_sub(busy), n),
    }
}

/// Share the busy period for backscatter; no harvesting, no active slots.
pub fn backscatter_allocation(busy: u32, n: usize) -> Allocation {
    Allocation {
        harvest: 0,
        backscatter: equal_split(busy, n),
        active: vec![0; n],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeeChoice {
    pub chain: usize,
    pub fee_interval: usize,
}

/// Fee interval of the size-weighted mean fee rate in `block`, or the lowest
/// interval for an empty block.
pub fn fee_estimate_last_block(block: &[Transaction], cfg: &ChainConfig) -> usize {
    let size: u64 = block.iter().map(|t| u64::from(t.size)).sum();
    if size == 0 {
        return 0;
    }
    let fees: f64 = block.iter().map(|t| f64::from(t.size) * t.fee_rate).sum();
    cfg.fee_interval(fees / size as f64)
}

fn index_for(table: &ActionTable, allocation: Allocation, fee: FeeChoice) -> Result<usize> {
    let action = Action {
        allocation,
        chain: fee.chain,
        fee_interval: fee.fee_interval,
    };
    table
        .index_of(&action)
        .ok_or_else(|| SimError::InfeasibleAllocation(format!("{action:?} not in action table")))
}

pub fn htt_policy(state: &NetworkState, table: &ActionTable, frame_slots: u32, fee: FeeChoice) -> Result<usize> {
    let n = state.transmitters.len();
    index_for(table, htt_allocation(state.busy_slots, frame_slots, n), fee)
}

pub fn backscatter_policy(state: &NetworkState, table: &ActionTable, fee: FeeChoice) -> Result<usize> {
    let n = state.transmitters.len();
    index_for(table, backscatter_allocation(state.busy_slots, n), fee)
}

/// Uniform feasible allocation and uniform chain; the fee interval comes from
/// `fee_for_chain` applied to the drawn chain.
pub fn random_policy<R: Rng + ?Sized>(
    state: &NetworkState,
    table: &ActionTable,
    chains: usize,
    rng: &mut R,
    fee_for_chain: impl Fn(usize) -> usize,
) -> Result<usize> {
    let feasible: Vec<usize> = table.feasible_allocations(state.busy_slots).collect();
    if feasible.is_empty() || chains == 0 {
        return Err(SimError::EmptyMask);
    }
    let alloc = feasible[rng.random_range(0..feasible.len())];
    let chain = rng.random_range(0..chains);
    Ok(table.compose(alloc, chain, fee_for_chain(chain)))
}

/// Harvest-then-transmit on chain 0 with the last-block fee estimate.
#[derive(Debug, Clone, Default)]
pub struct HttPolicy;

impl Policy for HttPolicy {
    fn name(&self) -> &'static str {
        "htt"
    }

    fn select(&mut self, env: &GatewayEnv, state: &NetworkState) -> Result<usize> {
        let fee = FeeChoice {
            chain: 0,
            fee_interval: fee_estimate_last_block(env.last_block(0), env.chain()),
        };
        htt_policy(state, env.table(), env.radio().frame_slots, fee)
    }
}

/// Backscatter-only on chain 0 with the last-block fee estimate.
#[derive(Debug, Clone, Default)]
pub struct BackscatterPolicy;

impl Policy for BackscatterPolicy {
    fn name(&self) -> &'static str {
        "backscatter"
    }

    fn select(&mut self, env: &GatewayEnv, state: &NetworkState) -> Result<usize> {
        let fee = FeeChoice {
            chain: 0,
            fee_interval: fee_estimate_last_block(env.last_block(0), env.chain()),
        };
        backscatter_policy(state, env.table(), fee)
    }
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(rng: ChaCha8Rng) -> Self {
        RandomPolicy { rng }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn select(&mut self, env: &GatewayEnv, state: &NetworkState) -> Result<usize> {
        random_policy(state, env.table(), env.chain().num_chains, &mut self.rng, |k| {
            fee_estimate_last_block(env.last_block(k), env.chain())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainConfig;
    use crate::mdp::{build_action_table, MdpConfig};
    use crate::radio::{RadioConfig, SuccessMode, TransmitterParams, TransmitterState};
    use rand::SeedableRng;
    use std::collections::HashSet;

    fn chain_cfg() -> ChainConfig {
        ChainConfig {
            num_chains: 2,
            mempool_capacity: 50,
            block_capacity: 30,
            background_count: 5,
            background_size_max: 5,
            fee_min: 0.01,
            fee_max: 0.8,
            fee_intervals: 4,
            attacker_share: vec![0.05, 0.05],
            confirmation_depth: 2,
            fee_on_submit: false,
            refund_on_attack: false,
        }
    }

    fn radio_cfg(y: u32, n: usize) -> RadioConfig {
        RadioConfig {
            frame_slots: y,
            transmitters: vec![TransmitterParams::default(); n],
            busy_min: 1,
            busy_max: y - 1,
            success_mode: SuccessMode::Bernoulli,
        }
    }

    fn state(busy: u32, n: usize, k: usize) -> NetworkState {
        NetworkState {
            busy_slots: busy,
            transmitters: vec![TransmitterState::default(); n],
            mempools: vec![vec![0; 4]; k],
        }
    }

    fn tx(size: u32, fee_rate: f64) -> Transaction {
        Transaction { id: 0, size, fee_rate, arrival_seq: 0, is_gateway: false }
    }

    #[test]
    fn split_examples() {
        assert_eq!(equal_split(4, 2), vec![2, 2]);
        assert_eq!(equal_split(3, 2), vec![2, 1]);
        assert_eq!(equal_split(0, 3), vec![0, 0, 0]);
        assert_eq!(equal_split(5, 3), vec![2, 2, 1]);
    }

    #[test]
    fn htt_examples() {
        let a = htt_allocation(3, 7, 2);
        assert_eq!((a.harvest, a.backscatter.clone(), a.active.clone()), (3, vec![0, 0], vec![2, 2]));
        let a = htt_allocation(4, 7, 2);
        assert_eq!((a.harvest, a.active), (4, vec![2, 1]));
    }

    #[test]
    fn backscatter_example() {
        let a = backscatter_allocation(4, 2);
        assert_eq!((a.harvest, a.backscatter, a.active), (0, vec![2, 2], vec![0, 0]));
    }

    #[test]
    fn baselines_are_feasible_in_table() {
        let radio = radio_cfg(5, 2);
        let table = build_action_table(&radio, &chain_cfg(), 10_000).unwrap();
        let fee = FeeChoice { chain: 1, fee_interval: 3 };
        for b in 0..=5 {
            let s = state(b, 2, 2);
            for idx in [htt_policy(&s, &table, 5, fee).unwrap(), backscatter_policy(&s, &table, fee).unwrap()] {
                assert!(table.mask_for_busy(b)[idx]);
                let act = table.action(idx);
                assert_eq!((act.chain, act.fee_interval), (1, 3));
                assert!(act.allocation.total_slots() <= 5);
            }
        }
    }

    #[test]
    fn estimator_example() {
        let cfg = chain_cfg();
        assert_eq!(fee_estimate_last_block(&[tx(5, 0.2), tx(5, 0.4)], &cfg), 1);
        assert_eq!(fee_estimate_last_block(&[], &cfg), 0);
        // weighting by size pulls the mean toward the large transaction
        assert_eq!(fee_estimate_last_block(&[tx(1, 0.05), tx(9, 0.75)], &cfg), 3);
        assert_eq!(fee_estimate_last_block(&[tx(4, 0.5)], &cfg), cfg.fee_interval(0.5));
        assert_eq!(fee_estimate_last_block(&[tx(2, 0.8)], &cfg), 3);
    }

    #[test]
    fn random_without_busy_slots_neither_harvests_nor_backscatters() {
        let radio = RadioConfig { busy_min: 0, ..radio_cfg(5, 2) };
        let table = build_action_table(&radio, &chain_cfg(), 10_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let a = table.action(random_policy(&state(0, 2, 2), &table, 2, &mut rng, |_| 0).unwrap()).allocation;
            assert_eq!(a.busy_slots_used(), 0);
        }
    }

    #[test]
    fn random_covers_every_feasible_allocation() {
        let radio = radio_cfg(5, 2);
        let cfg = chain_cfg();
        let table = build_action_table(&radio, &cfg, 10_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = state(2, 2, 2);
        let mut seen = HashSet::new();
        let mut chains = [0usize; 2];
        for _ in 0..100_000 {
            let idx = random_policy(&s, &table, 2, &mut rng, |k| k + 1).unwrap();
            assert!(table.mask_for_busy(2)[idx]);
            let act = table.action(idx);
            assert_eq!(act.fee_interval, act.chain + 1);
            chains[act.chain] += 1;
            seen.insert(idx / (2 * 4));
        }
        let expected: HashSet<usize> = table.feasible_allocations(2).collect();
        assert_eq!(seen, expected);
        assert!((chains[0] as f64 / 100_000.0 - 0.5).abs() < 0.01);
    }

    #[test]
    fn random_policy_is_reproducible() {
        let run = || {
            let mut env = GatewayEnv::with_seed(radio_cfg(5, 2), chain_cfg(), MdpConfig::default(), 4).unwrap();
            let mut p = RandomPolicy::new(ChaCha8Rng::seed_from_u64(9));
            let mut s = env.reset();
            let mut picks = Vec::new();
            for _ in 0..200 {
                let a = p.select(&env, &s).unwrap();
                picks.push(a);
                s = env.step(a).unwrap().next_state;
            }
            picks
        };
        assert_eq!(run(), run());
    }
}
