//! Blockchain mempools, greedy block formation and the double-spend model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub num_chains: usize,
    /// Mempool capacity in data units.
    pub mempool_capacity: u32,
    /// Block capacity in data units.
    pub block_capacity: u32,
    /// Background transactions per frame.
    pub background_count: u32,
    pub background_size_max: u32,
    pub fee_min: f64,
    pub fee_max: f64,
    pub fee_intervals: usize,
    /// Attacker hash share per chain.
    pub attacker_share: Vec<f64>,
    pub confirmation_depth: u32,
    /// Charge the gateway even when its transaction misses the block.
    pub fee_on_submit: bool,
    /// Waive the fee when the including block is overturned.
    pub refund_on_attack: bool,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.num_chains == 0 {
            return bad("num_chains must be at least 1".into());
        }
        if self.block_capacity == 0 || self.block_capacity > self.mempool_capacity {
            return bad(format!(
                "need 0 < block_capacity ({}) <= mempool_capacity ({})",
                self.block_capacity, self.mempool_capacity
            ));
        }
        if !(self.fee_min < self.fee_max) || self.fee_min < 0.0 {
            return bad(format!("need 0 <= fee_min < fee_max, got [{}, {}]", self.fee_min, self.fee_max));
        }
        if self.fee_intervals == 0 {
            return bad("fee_intervals must be at least 1".into());
        }
        if self.background_count > 0 && self.background_size_max == 0 {
            return bad("background_size_max must be positive".into());
        }
        if self.attacker_share.len() != self.num_chains {
            return bad(format!(
                "{} attacker shares for {} chains",
                self.attacker_share.len(),
                self.num_chains
            ));
        }
        if self.attacker_share.iter().any(|q| !(0.0..1.0).contains(q)) {
            return bad("attacker_share must lie in [0, 1)".into());
        }
        if self.confirmation_depth == 0 {
            return bad("confirmation_depth must be at least 1".into());
        }
        Ok(())
    }

    pub fn interval_width(&self) -> f64 {
        (self.fee_max - self.fee_min) / self.fee_intervals as f64
    }

    /// Index of the fee interval containing `fee`. Intervals are half-open
    /// except the last, which also holds `fee_max`; values outside the range
    /// are clamped to the end intervals.
    pub fn fee_interval(&self, fee: f64) -> usize {
        let pos = ((fee - self.fee_min) / self.interval_width()).floor();
        if pos <= 0.0 {
            0
        } else {
            (pos as usize).min(self.fee_intervals - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: u64,
    pub size: u32,
    pub fee_rate: f64,
    pub arrival_seq: u64,
    pub is_gateway: bool,
}

impl Transaction {
    pub fn fee(&self) -> f64 {
        f64::from(self.size) * self.fee_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubmitOutcome {
    Accepted { evicted: Vec<Transaction> },
    Rejected,
}

impl SubmitOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, SubmitOutcome::Accepted { .. })
    }
}

/// Pending transactions of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mempool {
    pending: Vec<Transaction>,
    total_size: u32,
    capacity: u32,
    next_seq: u64,
}

impl Mempool {
    pub fn new(capacity: u32) -> Self {
        Mempool {
            pending: Vec::new(),
            total_size: 0,
            capacity,
            next_seq: 0,
        }
    }

    pub fn pending(&self) -> &[Transaction] {
        &self.pending
    }

    pub fn total_size(&self) -> u32 {
        self.total_size
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn clear(&mut self) {
        self.pending.clear();
        self.total_size = 0;
    }

    /// Arrival stamp for the next transaction.
    pub fn next_arrival_seq(&mut self) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        seq
    }

    /// Add `tx`, evicting lower-priority transactions if the pool is full.
    ///
    /// Eviction walks non-gateway transactions from the lowest fee rate up
    /// (oldest first on ties). A background transaction may only displace
    /// transactions ranked below it in that order; if the walk would reach the
    /// newcomer itself, it is rejected and the pool is left untouched. A
    /// gateway transaction may displace any background transaction.
    pub fn submit(&mut self, tx: Transaction) -> SubmitOutcome {
        if tx.size > self.capacity {
            return SubmitOutcome::Rejected;
        }
        let free = self.capacity - self.total_size;
        if tx.size <= free {
            self.total_size += tx.size;
            self.pending.push(tx);
            return SubmitOutcome::Accepted { evicted: Vec::new() };
        }

        let mut victims: Vec<usize> = (0..self.pending.len())
            .filter(|&i| !self.pending[i].is_gateway)
            .filter(|&i| tx.is_gateway || ranks_below(&self.pending[i], &tx))
            .collect();
        victims.sort_by(|&a, &b| eviction_order(&self.pending[a], &self.pending[b]));

        let mut reclaimed = free;
        let mut take = 0;
        while reclaimed < tx.size && take < victims.len() {
            reclaimed += self.pending[victims[take]].size;
            take += 1;
        }
        if reclaimed < tx.size {
            return SubmitOutcome::Rejected;
        }
        let mut doomed = victims[..take].to_vec();
        doomed.sort_unstable_by(|a, b| b.cmp(a));
        let mut evicted = Vec::with_capacity(take);
        for i in doomed {
            let gone = self.pending.remove(i);
            self.total_size -= gone.size;
            evicted.push(gone);
        }
        self.total_size += tx.size;
        self.pending.push(tx);
        SubmitOutcome::Accepted { evicted }
    }

    /// Remove the transaction with the given id, if pending.
    pub fn remove(&mut self, id: u64) -> Option<Transaction> {
        let pos = self.pending.iter().position(|t| t.id == id)?;
        let tx = self.pending.remove(pos);
        self.total_size -= tx.size;
        Some(tx)
    }
}

fn eviction_order(a: &Transaction, b: &Transaction) -> std::cmp::Ordering {
    a.fee_rate
        .total_cmp(&b.fee_rate)
        .then(a.arrival_seq.cmp(&b.arrival_seq))
}

fn ranks_below(pending: &Transaction, incoming: &Transaction) -> bool {
    eviction_order(pending, incoming).is_lt()
}

/// Draw `background_count` transactions with uniform sizes on
/// `1..=background_size_max` and uniform fee rates on `[fee_min, fee_max]`,
/// submitting each in turn. `next_id` supplies unique ids.
pub fn background_arrivals<R: Rng + ?Sized>(
    pool: &mut Mempool,
    rng: &mut R,
    cfg: &ChainConfig,
    next_id: &mut u64,
) {
    for _ in 0..cfg.background_count {
        let size = rng.random_range(1..=cfg.background_size_max);
        let fee_rate = rng.random_range(cfg.fee_min..=cfg.fee_max);
        let tx = Transaction {
            id: *next_id,
            size,
            fee_rate,
            arrival_seq: pool.next_arrival_seq(),
            is_gateway: false,
        };
        *next_id += 1;
        pool.submit(tx);
    }
}

/// Greedy block packing: highest fee rate first (FIFO on ties), skipping any
/// transaction that no longer fits.
pub fn mine_block(pool: &mut Mempool, block_capacity: u32) -> Vec<Transaction> {
    let mut order: Vec<Transaction> = std::mem::take(&mut pool.pending);
    order.sort_by(|a, b| {
        b.fee_rate
            .total_cmp(&a.fee_rate)
            .then(a.arrival_seq.cmp(&b.arrival_seq))
    });
    let mut room = block_capacity;
    let mut block = Vec::new();
    let mut rest = Vec::new();
    for tx in order {
        if tx.size <= room {
            room -= tx.size;
            block.push(tx);
        } else {
            rest.push(tx);
        }
    }
    rest.sort_by_key(|t| t.arrival_seq);
    pool.total_size = rest.iter().map(|t| t.size).sum();
    pool.pending = rest;
    block
}

/// Probability that an attacker with hash share `q` overturns a transaction
/// buried under `confirmations` honest blocks.
///
/// `1 - sum_{m=0}^{n} C(m+n-1, m) (p^n q^m - p^m q^n)` with `p = 1 - q`,
/// and 1 whenever `q >= p`.
pub fn attack_probability<T: Scalar>(q: T, confirmations: u32) -> T {
    let one = T::one();
    let p = one - q;
    if q >= p {
        return one;
    }
    let n = confirmations as i32;
    let pn = p.powi(n);
    let qn = q.powi(n);
    let mut sum = T::zero();
    // C(m+n-1, m) built up incrementally; C(n-1, 0) = 1.
    let mut binom = one;
    for m in 0..=n {
        if m > 0 {
            binom = binom * T::lit(f64::from(m + n - 1)) / T::lit(f64::from(m));
        }
        sum += binom * (pn * q.powi(m) - p.powi(m) * qn);
    }
    (one - sum).max(T::zero()).min(one)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SettleOutcome {
    pub included: bool,
    pub attacked: bool,
    pub fee_charged: f64,
    /// Data units stored and not overturned.
    pub stored_units: u32,
}

/// Resolve the gateway's transaction against the block just mined.
///
/// One uniform draw is consumed whenever the transaction is included, even
/// when the attack probability is zero, so runs that differ only in `q`
/// share their random streams.
pub fn settle<R: Rng + ?Sized>(
    block: &[Transaction],
    gateway_tx: Option<&Transaction>,
    attacker_share: f64,
    cfg: &ChainConfig,
    rng: &mut R,
) -> SettleOutcome {
    let Some(gw) = gateway_tx else {
        return SettleOutcome::default();
    };
    let included = block.iter().any(|t| t.id == gw.id);
    if !included {
        let fee_charged = if cfg.fee_on_submit { gw.fee() } else { 0.0 };
        return SettleOutcome { fee_charged, ..SettleOutcome::default() };
    }
    let p_attack = attack_probability(attacker_share, cfg.confirmation_depth);
    let attacked = rng.random::<f64>() < p_attack;
    let fee_charged = if attacked && cfg.refund_on_attack { 0.0 } else { gw.fee() };
    SettleOutcome {
        included,
        attacked,
        fee_charged,
        stored_units: if attacked { 0 } else { gw.size },
    }
}

/// Data units pending in each fee interval.
pub fn observe_mempool(pool: &Mempool, cfg: &ChainConfig) -> Vec<u32> {
    let mut hist = vec![0u32; cfg.fee_intervals];
    for tx in pool.pending() {
        hist[cfg.fee_interval(tx.fee_rate)] += tx.size;
    }
    hist
}
