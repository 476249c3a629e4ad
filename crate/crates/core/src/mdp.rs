//! The gateway's decision process: state assembly, the static action grid
//! with per-state feasibility masks, and the one-frame transition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use crate::chain::{
    background_arrivals, mine_block, observe_mempool, settle, ChainConfig, Mempool, Transaction,
};
use crate::error::{Result, SimError};
use crate::radio::{sample_busy_slots, step_radio, Allocation, RadioConfig, TransmitterState};
use crate::scalar::Scalar;

/// Reward and fee quantization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig {
    /// Reward per stored data unit.
    pub reward_per_unit: f64,
    /// Position of the representative fee inside its interval, in [0, 1].
    pub fee_offset: f64,
    /// Upper bound on the action table size.
    pub max_actions: usize,
}

impl Default for MdpConfig {
    fn default() -> Self {
        MdpConfig {
            reward_per_unit: 1.0,
            fee_offset: 0.2,
            max_actions: 1_000_000,
        }
    }
}

impl MdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fee_offset) {
            return Err(SimError::InvalidConfig(format!(
                "fee_offset {} outside [0, 1]",
                self.fee_offset
            )));
        }
        if !self.reward_per_unit.is_finite() {
            return Err(SimError::InvalidConfig("reward_per_unit must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkState {
    pub busy_slots: u32,
    pub transmitters: Vec<TransmitterState>,
    /// Per chain, data units pending in each fee interval.
    pub mempools: Vec<Vec<u32>>,
}

impl NetworkState {
    /// Flat integer key, used by the tabular learner.
    pub fn key(&self) -> Vec<u32> {
        let mut k = Vec::with_capacity(1 + 2 * self.transmitters.len() + self.mempools.len() * 4);
        k.push(self.busy_slots);
        for t in &self.transmitters {
            k.push(t.queue);
            k.push(t.energy);
        }
        for h in &self.mempools {
            k.extend_from_slice(h);
        }
        k
    }
}

/// One entry of the action grid. `chain` and `fee_interval` are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub allocation: Allocation,
    pub chain: usize,
    pub fee_interval: usize,
}

/// Every slot allocation with `harvest + sum(backscatter) + sum(active) <= Y`,
/// crossed with every chain and fee interval.
///
/// Index layout: `(allocation * chains + chain) * fee_intervals + fee_interval`,
/// allocations in lexicographic order of `(harvest, backscatter.., active..)`.
#[derive(Debug, Clone)]
pub struct ActionTable {
    allocations: Vec<Allocation>,
    busy_use: Vec<u32>,
    lookup: HashMap<Allocation, usize>,
    chains: usize,
    fee_intervals: usize,
    masks: Vec<Vec<bool>>,
}

/// Number of nonnegative integer `dims`-tuples summing to at most `budget`.
pub fn allocation_count(budget: u32, dims: u32) -> u128 {
    // C(budget + dims, dims)
    let mut c: u128 = 1;
    for i in 1..=u128::from(dims) {
        c = c * (u128::from(budget) + i) / i;
    }
    c
}

pub fn build_action_table(
    radio: &RadioConfig,
    chain: &ChainConfig,
    max_actions: usize,
) -> Result<ActionTable> {
    let n = radio.num_transmitters();
    let dims = 2 * n as u32 + 1;
    let size = allocation_count(radio.frame_slots, dims)
        .saturating_mul(chain.num_chains as u128)
        .saturating_mul(chain.fee_intervals as u128);
    if size > max_actions as u128 {
        return Err(SimError::ConfigTooLarge { size, limit: max_actions });
    }

    let mut allocations = Vec::new();
    let mut tuple = vec![0u32; dims as usize];
    enumerate(&mut tuple, 0, radio.frame_slots, &mut |t| {
        allocations.push(Allocation {
            harvest: t[0],
            backscatter: t[1..=n].to_vec(),
            active: t[n + 1..].to_vec(),
        });
    });
    let busy_use: Vec<u32> = allocations.iter().map(Allocation::busy_slots_used).collect();
    let lookup = allocations.iter().cloned().zip(0..).collect();
    let chains = chain.num_chains;
    let fee_intervals = chain.fee_intervals;
    let masks = (0..=radio.frame_slots)
        .map(|b| {
            let mut m = Vec::with_capacity(allocations.len() * chains * fee_intervals);
            for &used in &busy_use {
                m.extend(std::iter::repeat_n(used <= b, chains * fee_intervals));
            }
            m
        })
        .collect();
    Ok(ActionTable {
        allocations,
        busy_use,
        lookup,
        chains,
        fee_intervals,
        masks,
    })
}

fn enumerate(tuple: &mut [u32], pos: usize, remaining: u32, emit: &mut impl FnMut(&[u32])) {
    if pos == tuple.len() {
        emit(tuple);
        return;
    }
    for v in 0..=remaining {
        tuple[pos] = v;
        enumerate(tuple, pos + 1, remaining - v, emit);
    }
    tuple[pos] = 0;
}

impl ActionTable {
    pub fn len(&self) -> usize {
        self.allocations.len() * self.chains * self.fee_intervals
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn allocations(&self) -> &[Allocation] {
        &self.allocations
    }

    pub fn action(&self, index: usize) -> Action {
        let per_alloc = self.chains * self.fee_intervals;
        let (alloc, rest) = (index / per_alloc, index % per_alloc);
        Action {
            allocation: self.allocations[alloc].clone(),
            chain: rest / self.fee_intervals,
            fee_interval: rest % self.fee_intervals,
        }
    }

    pub fn index_of(&self, action: &Action) -> Option<usize> {
        if action.chain >= self.chains || action.fee_interval >= self.fee_intervals {
            return None;
        }
        let alloc = *self.lookup.get(&action.allocation)?;
        Some(self.compose(alloc, action.chain, action.fee_interval))
    }

    pub fn compose(&self, allocation: usize, chain: usize, fee_interval: usize) -> usize {
        (allocation * self.chains + chain) * self.fee_intervals + fee_interval
    }

    /// Busy slots consumed by the allocation behind `index`.
    pub fn busy_use(&self, index: usize) -> u32 {
        self.busy_use[index / (self.chains * self.fee_intervals)]
    }

    /// Feasibility of every action when `busy` slots are busy.
    pub fn mask_for_busy(&self, busy: u32) -> &[bool] {
        let b = (busy as usize).min(self.masks.len() - 1);
        &self.masks[b]
    }

    /// Allocation indices feasible under `busy` busy slots.
    pub fn feasible_allocations(&self, busy: u32) -> impl Iterator<Item = usize> + '_ {
        self.busy_use
            .iter()
            .enumerate()
            .filter(move |(_, &u)| u <= busy)
            .map(|(i, _)| i)
    }
}

/// `mask[i]` is true when action `i` respects both the busy-slot and the
/// frame budget in `state`.
pub fn feasible_mask(state: &NetworkState, table: &ActionTable) -> Vec<bool> {
    table.mask_for_busy(state.busy_slots).to_vec()
}

/// Representative fee rate of zero-based interval `fee_interval`.
pub fn fee_rate(fee_interval: usize, chain: &ChainConfig, offset: f64) -> f64 {
    chain.fee_min + (fee_interval as f64 + offset) * chain.interval_width()
}

/// Length of the feature vector produced by [`encode_state`].
pub fn feature_width(radio: &RadioConfig, chain: &ChainConfig) -> usize {
    1 + 2 * radio.num_transmitters() + chain.num_chains * chain.fee_intervals
}

/// Normalized feature vector:
/// `[b/Y, q_1/Q_1, c_1/C_1, .., m^1_1/M_max, .., m^K_M/M_max]`.
pub fn encode_state<T: Scalar>(state: &NetworkState, radio: &RadioConfig, chain: &ChainConfig) -> Vec<T> {
    let mut out = Vec::with_capacity(feature_width(radio, chain));
    let ratio = |num: u32, den: u32| {
        if den == 0 {
            T::zero()
        } else {
            T::lit(f64::from(num) / f64::from(den))
        }
    };
    out.push(ratio(state.busy_slots, radio.frame_slots));
    for (t, p) in state.transmitters.iter().zip(&radio.transmitters) {
        out.push(ratio(t.queue, p.queue_capacity));
        out.push(ratio(t.energy, p.energy_capacity));
    }
    for hist in &state.mempools {
        for &m in hist {
            out.push(ratio(m, chain.mempool_capacity));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    /// Data units delivered to the gateway this frame.
    pub delivered: u32,
    /// Data units stored on chain and not overturned.
    pub stored: u32,
    pub fee_charged: f64,
    pub submitted: bool,
    pub included: bool,
    pub attacked: bool,
    pub dropped_arrivals: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: NetworkState,
    pub reward: f64,
    pub info: StepInfo,
}

/// Simulated network seen from the gateway.
#[derive(Debug, Clone)]
pub struct GatewayEnv {
    radio: RadioConfig,
    chain: ChainConfig,
    mdp: MdpConfig,
    table: ActionTable,
    busy: u32,
    transmitters: Vec<TransmitterState>,
    pools: Vec<Mempool>,
    last_blocks: Vec<Vec<Transaction>>,
    next_tx_id: u64,
    rng: ChaCha8Rng,
}

impl GatewayEnv {
    pub fn new(radio: RadioConfig, chain: ChainConfig, mdp: MdpConfig, rng: ChaCha8Rng) -> Result<Self> {
        radio.validate()?;
        chain.validate()?;
        mdp.validate()?;
        let table = build_action_table(&radio, &chain, mdp.max_actions)?;
        let n = radio.num_transmitters();
        let k = chain.num_chains;
        let mut env = GatewayEnv {
            pools: (0..k).map(|_| Mempool::new(chain.mempool_capacity)).collect(),
            last_blocks: vec![Vec::new(); k],
            transmitters: vec![TransmitterState::default(); n],
            busy: 0,
            radio,
            chain,
            mdp,
            table,
            next_tx_id: 0,
            rng,
        };
        env.reset();
        Ok(env)
    }

    pub fn with_seed(radio: RadioConfig, chain: ChainConfig, mdp: MdpConfig, seed: u64) -> Result<Self> {
        Self::new(radio, chain, mdp, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Empty queues, batteries and mempools; draw a fresh busy period.
    pub fn reset(&mut self) -> NetworkState {
        self.transmitters.fill(TransmitterState::default());
        self.pools.iter_mut().for_each(Mempool::clear);
        self.last_blocks.iter_mut().for_each(Vec::clear);
        self.busy = sample_busy_slots(&mut self.rng, &self.radio);
        self.state()
    }

    pub fn state(&self) -> NetworkState {
        NetworkState {
            busy_slots: self.busy,
            transmitters: self.transmitters.clone(),
            mempools: self.pools.iter().map(|p| observe_mempool(p, &self.chain)).collect(),
        }
    }

    /// Overwrite the observable state. Mempool contents are not touched.
    pub fn set_radio_state(&mut self, busy: u32, transmitters: Vec<TransmitterState>) -> Result<()> {
        if transmitters.len() != self.radio.num_transmitters() {
            return Err(SimError::ShapeMismatch {
                expected: self.radio.num_transmitters(),
                got: transmitters.len(),
            });
        }
        for (t, p) in transmitters.iter().zip(&self.radio.transmitters) {
            if t.queue > p.queue_capacity || t.energy > p.energy_capacity {
                return Err(SimError::InvalidConfig(format!("state {t:?} exceeds capacity")));
            }
        }
        if busy > self.radio.frame_slots {
            return Err(SimError::InvalidConfig(format!("busy {busy} exceeds frame")));
        }
        self.busy = busy;
        self.transmitters = transmitters;
        Ok(())
    }

    pub fn radio(&self) -> &RadioConfig {
        &self.radio
    }

    pub fn chain(&self) -> &ChainConfig {
        &self.chain
    }

    pub fn mdp(&self) -> &MdpConfig {
        &self.mdp
    }

    pub fn table(&self) -> &ActionTable {
        &self.table
    }

    pub fn busy_slots(&self) -> u32 {
        self.busy
    }

    pub fn mempool(&self, chain: usize) -> &Mempool {
        &self.pools[chain]
    }

    pub fn mempool_mut(&mut self, chain: usize) -> &mut Mempool {
        &mut self.pools[chain]
    }

    /// Most recent block mined on `chain` (empty before the first frame).
    pub fn last_block(&self, chain: usize) -> &[Transaction] {
        &self.last_blocks[chain]
    }

    pub fn feature_width(&self) -> usize {
        feature_width(&self.radio, &self.chain)
    }

    pub fn encode<T: Scalar>(&self, state: &NetworkState) -> Vec<T> {
        encode_state(state, &self.radio, &self.chain)
    }

    pub fn current_mask(&self) -> &[bool] {
        self.table.mask_for_busy(self.busy)
    }

    pub fn step(&mut self, action_index: usize) -> Result<StepResult> {
        if action_index >= self.table.len() {
            return Err(SimError::InfeasibleAllocation(format!(
                "action {action_index} outside table of {}",
                self.table.len()
            )));
        }
        let action = self.table.action(action_index);
        self.step_action(&action)
    }

    /// One frame: radio, gateway transaction, background traffic, mining,
    /// settlement, reward, then a new busy period.
    pub fn step_action(&mut self, action: &Action) -> Result<StepResult> {
        if action.chain >= self.chain.num_chains || action.fee_interval >= self.chain.fee_intervals {
            return Err(SimError::InfeasibleAllocation(format!(
                "chain {} / fee interval {} out of range",
                action.chain, action.fee_interval
            )));
        }
        let (next, frame) = step_radio(
            &self.transmitters,
            self.busy,
            &action.allocation,
            &self.radio,
            &mut self.rng,
        )?;
        self.transmitters = next;
        let delivered = frame.total_delivered;

        let mut gateway_tx = None;
        if delivered > 0 {
            let pool = &mut self.pools[action.chain];
            let tx = Transaction {
                id: self.next_tx_id,
                size: delivered,
                fee_rate: fee_rate(action.fee_interval, &self.chain, self.mdp.fee_offset),
                arrival_seq: pool.next_arrival_seq(),
                is_gateway: true,
            };
            self.next_tx_id += 1;
            // A rejected submission still leaves the gateway's intent on record
            // for settlement; it simply cannot appear in the block.
            pool.submit(tx.clone());
            gateway_tx = Some(tx);
        }

        for pool in &mut self.pools {
            background_arrivals(pool, &mut self.rng, &self.chain, &mut self.next_tx_id);
        }
        for (pool, last) in self.pools.iter_mut().zip(&mut self.last_blocks) {
            *last = mine_block(pool, self.chain.block_capacity);
        }

        let outcome = settle(
            &self.last_blocks[action.chain],
            gateway_tx.as_ref(),
            self.chain.attacker_share[action.chain],
            &self.chain,
            &mut self.rng,
        );
        if let Some(tx) = &gateway_tx {
            // missed transactions do not linger
            self.pools[action.chain].remove(tx.id);
        }

        let reward = self.mdp.reward_per_unit * f64::from(outcome.stored_units) - outcome.fee_charged;
        self.busy = sample_busy_slots(&mut self.rng, &self.radio);
        Ok(StepResult {
            next_state: self.state(),
            reward,
            info: StepInfo {
                delivered,
                stored: outcome.stored_units,
                fee_charged: outcome.fee_charged,
                submitted: gateway_tx.is_some(),
                included: outcome.included,
                attacked: outcome.attacked,
                dropped_arrivals: frame.total_dropped(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{SuccessMode, TransmitterParams};

    pub(crate) fn radio(y: u32, n: usize) -> RadioConfig {
        RadioConfig {
            frame_slots: y,
            transmitters: vec![
                TransmitterParams {
                    queue_capacity: 7,
                    energy_capacity: 5,
                    harvest_rate: 1,
                    active_energy: 1,
                    backscatter_rate: 1,
                    active_rate: 2,
                    success_backscatter: 1.0,
                    success_active: 1.0,
                    arrival_rate: 0.0,
                };
                n
            ],
            busy_min: 0,
            busy_max: y,
            success_mode: SuccessMode::Bernoulli,
        }
    }

    pub(crate) fn chain(k: usize, m: usize) -> ChainConfig {
        ChainConfig {
            num_chains: k,
            mempool_capacity: 50,
            block_capacity: 30,
            background_count: 0,
            background_size_max: 10,
            fee_min: 0.01,
            fee_max: 0.8,
            fee_intervals: m,
            attacker_share: vec![0.0; k],
            confirmation_depth: 2,
            fee_on_submit: false,
            refund_on_attack: false,
        }
    }

    #[test]
    fn table_sizes() {
        assert_eq!(build_action_table(&radio(2, 1), &chain(1, 1), 1 << 20).unwrap().len(), 10);
        assert_eq!(build_action_table(&radio(1, 1), &chain(1, 1), 1 << 20).unwrap().len(), 4);
        assert_eq!(build_action_table(&radio(2, 1), &chain(3, 1), 1 << 20).unwrap().len(), 30);
        assert_eq!(build_action_table(&radio(2, 1), &chain(3, 4), 1 << 20).unwrap().len(), 120);
        assert!(matches!(
            build_action_table(&radio(7, 2), &chain(3, 4), 1000),
            Err(SimError::ConfigTooLarge { .. })
        ));
    }

    #[test]
    fn table_roundtrips_indices() {
        let t = build_action_table(&radio(3, 2), &chain(2, 3), 1 << 20).unwrap();
        for i in 0..t.len() {
            assert_eq!(t.index_of(&t.action(i)), Some(i));
        }
        // lexicographic: first allocation is all-zero, last is harvest = Y
        assert_eq!(t.allocations()[0], Allocation::idle(2));
        assert_eq!(t.allocations().last().unwrap().harvest, 3);
    }

    #[test]
    fn mask_examples() {
        let t = build_action_table(&radio(2, 1), &chain(1, 1), 1 << 20).unwrap();
        let mk = |b| NetworkState {
            busy_slots: b,
            transmitters: vec![TransmitterState::default()],
            mempools: vec![vec![0]],
        };
        // brute force over (mu, alpha, beta) with mu + alpha <= 1, total <= 2
        assert_eq!(feasible_mask(&mk(1), &t).iter().filter(|&&f| f).count(), 7);
        assert_eq!(feasible_mask(&mk(2), &t).iter().filter(|&&f| f).count(), 10);
        let m0 = feasible_mask(&mk(0), &t);
        for (i, &ok) in m0.iter().enumerate() {
            let a = t.action(i).allocation;
            assert_eq!(ok, a.harvest == 0 && a.backscatter[0] == 0);
        }
    }

    #[test]
    fn fee_rate_examples() {
        let c = chain(1, 4);
        assert_eq!(fee_rate(0, &c, 0.0), 0.01);
        assert!((fee_rate(3, &c, 1.0) - 0.8).abs() < 1e-12);
        assert!((fee_rate(0, &c, 0.2) - 0.0495).abs() < 1e-12);
    }

    #[test]
    fn encoding_examples() {
        let r = radio(7, 2);
        let c = chain(2, 4);
        let zero = NetworkState {
            busy_slots: 0,
            transmitters: vec![TransmitterState::default(); 2],
            mempools: vec![vec![0; 4]; 2],
        };
        let e: Vec<f64> = encode_state(&zero, &r, &c);
        assert_eq!(e.len(), 1 + 4 + 8);
        assert!(e.iter().all(|&v| v == 0.0));
        let full = NetworkState {
            busy_slots: 7,
            transmitters: vec![TransmitterState { queue: 7, energy: 5 }; 2],
            mempools: vec![vec![50, 0, 0, 0]; 2],
        };
        let e: Vec<f64> = encode_state(&full, &r, &c);
        assert_eq!(e[..5], [1.0; 5]);
        let three = NetworkState { busy_slots: 3, ..zero };
        let e: Vec<f32> = encode_state(&three, &r, &c);
        assert_eq!(e[0], 3.0f32 / 7.0);
    }

    fn env(rad: RadioConfig, ch: ChainConfig) -> GatewayEnv {
        GatewayEnv::with_seed(rad, ch, MdpConfig::default(), 17).unwrap()
    }

    #[test]
    fn zero_delivery_submits_nothing() {
        let mut e = env(radio(7, 1), chain(1, 4));
        let idle = e.table().index_of(&Action {
            allocation: Allocation::idle(1),
            chain: 0,
            fee_interval: 0,
        });
        let r = e.step(idle.unwrap()).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(!r.info.submitted);
    }

    fn deliver_ten(q: f64) -> StepResult {
        let mut ch = chain(1, 4);
        ch.attacker_share = vec![q];
        let mut e = env(radio(7, 2), ch);
        e.set_radio_state(
            2,
            vec![TransmitterState { queue: 7, energy: 5 }, TransmitterState { queue: 3, energy: 5 }],
        )
        .unwrap();
        let action = Action {
            allocation: Allocation { harvest: 0, backscatter: vec![1, 1], active: vec![3, 1] },
            chain: 0,
            fee_interval: 0,
        };
        e.step_action(&action).unwrap()
    }

    #[test]
    fn reward_when_stored() {
        let r = deliver_ten(0.0);
        assert_eq!(r.info.delivered, 10);
        assert!(r.info.included && !r.info.attacked);
        assert!((r.reward - 9.505).abs() < 1e-12);
    }

    #[test]
    fn reward_when_attacked() {
        let r = deliver_ten(0.6);
        assert!(r.info.included && r.info.attacked);
        assert!((r.reward + 0.495).abs() < 1e-12);
    }

    #[test]
    fn infeasible_action_errors() {
        let mut e = env(radio(7, 1), chain(1, 4));
        e.set_radio_state(1, vec![TransmitterState::default()]).unwrap();
        let a = Action {
            allocation: Allocation { harvest: 2, backscatter: vec![0], active: vec![0] },
            chain: 0,
            fee_interval: 0,
        };
        assert!(matches!(e.step_action(&a), Err(SimError::InfeasibleAllocation(_))));
    }
}
