//! Primary channel and secondary transmitter dynamics for one time frame.
//!
//! A frame has `frame_slots` slots. The primary transmitter occupies `b` of
//! them (the busy period). During the busy period each transmitter either
//! harvests energy or backscatters data; during the idle period it may
//! actively transmit using stored energy. New data arrives at the end of the
//! frame.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// How per-slot transmission success is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SuccessMode {
    /// One Bernoulli draw per transmitting slot.
    #[default]
    Bernoulli,
    /// Delivered units are the success probability times the drained units,
    /// rounded to the nearest whole unit. No random draws are consumed.
    Expected,
}

/// Static parameters of one secondary transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitterParams {
    pub queue_capacity: u32,
    pub energy_capacity: u32,
    /// Energy units harvested per busy slot.
    pub harvest_rate: u32,
    /// Energy units spent per active slot.
    pub active_energy: u32,
    /// Data units sent per backscatter slot.
    pub backscatter_rate: u32,
    /// Data units sent per active slot.
    pub active_rate: u32,
    pub success_backscatter: f64,
    pub success_active: f64,
    /// Mean data units arriving per frame.
    pub arrival_rate: f64,
}

impl Default for TransmitterParams {
    fn default() -> Self {
        TransmitterParams {
            queue_capacity: 7,
            energy_capacity: 5,
            harvest_rate: 1,
            active_energy: 1,
            backscatter_rate: 1,
            active_rate: 2,
            success_backscatter: 0.9,
            success_active: 0.95,
            arrival_rate: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioConfig {
    pub frame_slots: u32,
    pub transmitters: Vec<TransmitterParams>,
    pub busy_min: u32,
    pub busy_max: u32,
    pub success_mode: SuccessMode,
}

impl RadioConfig {
    pub fn num_transmitters(&self) -> usize {
        self.transmitters.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.frame_slots == 0 {
            return bad("frame_slots must be positive".into());
        }
        if self.transmitters.is_empty() {
            return bad("at least one transmitter is required".into());
        }
        if self.busy_min > self.busy_max || self.busy_max > self.frame_slots {
            return bad(format!(
                "busy range [{}, {}] must lie within [0, {}]",
                self.busy_min, self.busy_max, self.frame_slots
            ));
        }
        for (n, p) in self.transmitters.iter().enumerate() {
            for (name, s) in [
                ("success_backscatter", p.success_backscatter),
                ("success_active", p.success_active),
            ] {
                if !(0.0..=1.0).contains(&s) {
                    return bad(format!("transmitter {n}: {name}={s} outside [0, 1]"));
                }
            }
            if !(p.arrival_rate >= 0.0 && p.arrival_rate.is_finite()) {
                return bad(format!("transmitter {n}: arrival_rate must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Queue and energy level of one transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TransmitterState {
    pub queue: u32,
    pub energy: u32,
}

/// Slot allocation for one frame: harvesting budget, then per-transmitter
/// backscatter and active slot counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Allocation {
    pub harvest: u32,
    pub backscatter: Vec<u32>,
    pub active: Vec<u32>,
}

impl Allocation {
    pub fn idle(n: usize) -> Self {
        Allocation {
            harvest: 0,
            backscatter: vec![0; n],
            active: vec![0; n],
        }
    }

    /// Slots drawn from the busy period.
    pub fn busy_slots_used(&self) -> u32 {
        self.harvest + self.backscatter.iter().sum::<u32>()
    }

    pub fn total_slots(&self) -> u32 {
        self.busy_slots_used() + self.active.iter().sum::<u32>()
    }

    /// Largest number of data units this allocation could move.
    pub fn max_deliverable(&self, cfg: &RadioConfig) -> u32 {
        cfg.transmitters
            .iter()
            .zip(self.backscatter.iter().zip(&self.active))
            .map(|(p, (a, b))| a * p.backscatter_rate + b * p.active_rate)
            .sum()
    }

    pub fn check(&self, busy: u32, cfg: &RadioConfig) -> Result<()> {
        let n = cfg.num_transmitters();
        if self.backscatter.len() != n || self.active.len() != n {
            return Err(SimError::InfeasibleAllocation(format!(
                "allocation covers {} transmitters, config has {n}",
                self.backscatter.len()
            )));
        }
        if self.busy_slots_used() > busy {
            return Err(SimError::InfeasibleAllocation(format!(
                "harvest + backscatter = {} exceeds busy slots {busy}",
                self.busy_slots_used()
            )));
        }
        if self.total_slots() > cfg.frame_slots {
            return Err(SimError::InfeasibleAllocation(format!(
                "allocation uses {} slots, frame has {}",
                self.total_slots(),
                cfg.frame_slots
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameOutcome {
    pub delivered_backscatter: Vec<u32>,
    pub delivered_active: Vec<u32>,
    /// Arrivals lost to a full queue.
    pub dropped: Vec<u32>,
    pub total_delivered: u32,
}

impl FrameOutcome {
    pub fn total_dropped(&self) -> u32 {
        self.dropped.iter().sum()
    }
}

/// Uniform integer draw on the configured busy range.
pub fn sample_busy_slots<R: Rng + ?Sized>(rng: &mut R, cfg: &RadioConfig) -> u32 {
    if cfg.busy_min == cfg.busy_max {
        return cfg.busy_min;
    }
    rng.random_range(cfg.busy_min..=cfg.busy_max)
}

/// Energy after the busy period: every busy slot not spent backscattering is
/// harvested, capped at storage capacity.
pub fn harvest_phase(
    state: TransmitterState,
    busy: u32,
    backscatter_slots: u32,
    params: &TransmitterParams,
) -> Result<TransmitterState> {
    if backscatter_slots > busy {
        return Err(SimError::InfeasibleAllocation(format!(
            "{backscatter_slots} backscatter slots exceed {busy} busy slots"
        )));
    }
    let gained = u64::from(busy - backscatter_slots) * u64::from(params.harvest_rate);
    let energy = (u64::from(state.energy) + gained).min(u64::from(params.energy_capacity)) as u32;
    Ok(TransmitterState { energy, ..state })
}

fn succeeds<R: Rng + ?Sized>(rng: &mut R, probability: f64) -> bool {
    rng.random::<f64>() < probability
}

/// Backscatter during the busy period. The queue drains whether or not a
/// slot succeeds; only successful slots count as delivered.
pub fn backscatter_phase<R: Rng + ?Sized>(
    state: TransmitterState,
    slots: u32,
    params: &TransmitterParams,
    mode: SuccessMode,
    rng: &mut R,
) -> (TransmitterState, u32) {
    let mut queue = state.queue;
    let mut drained = 0u32;
    let mut delivered = 0u32;
    for _ in 0..slots {
        let payload = params.backscatter_rate.min(queue);
        if payload == 0 {
            break;
        }
        queue -= payload;
        drained += payload;
        if mode == SuccessMode::Bernoulli && succeeds(rng, params.success_backscatter) {
            delivered += payload;
        }
    }
    if mode == SuccessMode::Expected {
        delivered = (f64::from(drained) * params.success_backscatter).round() as u32;
    }
    (TransmitterState { queue, ..state }, delivered)
}

/// Active transmission during the idle period, slot by slot while both data
/// and a full slot's worth of energy remain.
pub fn active_phase<R: Rng + ?Sized>(
    state: TransmitterState,
    slots: u32,
    params: &TransmitterParams,
    mode: SuccessMode,
    rng: &mut R,
) -> (TransmitterState, u32) {
    let TransmitterState { mut queue, mut energy } = state;
    let mut drained = 0u32;
    let mut delivered = 0u32;
    for _ in 0..slots {
        if queue == 0 || energy < params.active_energy {
            break;
        }
        let payload = params.active_rate.min(queue);
        queue -= payload;
        energy -= params.active_energy;
        drained += payload;
        if mode == SuccessMode::Bernoulli && succeeds(rng, params.success_active) {
            delivered += payload;
        }
        // A zero-rate transmitter would otherwise spin on its energy budget.
        if payload == 0 && params.active_energy == 0 {
            break;
        }
    }
    if mode == SuccessMode::Expected {
        delivered = (f64::from(drained) * params.success_active).round() as u32;
    }
    (TransmitterState { queue, energy }, delivered)
}

/// Poisson arrivals at frame end. Returns the new state and the number of
/// units dropped because the queue was full.
pub fn arrival_phase<R: Rng + ?Sized>(
    state: TransmitterState,
    rng: &mut R,
    params: &TransmitterParams,
) -> (TransmitterState, u32) {
    let arrivals = sample_poisson(rng, params.arrival_rate);
    let total = u64::from(state.queue) + arrivals;
    let cap = u64::from(params.queue_capacity);
    let queue = total.min(cap) as u32;
    let dropped = total.saturating_sub(cap).min(u64::from(u32::MAX)) as u32;
    (TransmitterState { queue, ..state }, dropped)
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite Poisson mean");
    dist.sample(rng) as u64
}

/// Advance every transmitter through one frame: harvest, backscatter,
/// active transmission, then arrivals.
pub fn step_radio<R: Rng + ?Sized>(
    states: &[TransmitterState],
    busy: u32,
    allocation: &Allocation,
    cfg: &RadioConfig,
    rng: &mut R,
) -> Result<(Vec<TransmitterState>, FrameOutcome)> {
    if states.len() != cfg.num_transmitters() {
        return Err(SimError::ShapeMismatch {
            expected: cfg.num_transmitters(),
            got: states.len(),
        });
    }
    allocation.check(busy, cfg)?;
    let n = states.len();
    let mut next = Vec::with_capacity(n);
    let mut outcome = FrameOutcome {
        delivered_backscatter: Vec::with_capacity(n),
        delivered_active: Vec::with_capacity(n),
        dropped: Vec::with_capacity(n),
        total_delivered: 0,
    };
    for (i, (state, params)) in states.iter().zip(&cfg.transmitters).enumerate() {
        let s = harvest_phase(*state, busy, allocation.backscatter[i], params)?;
        let (s, bs) = backscatter_phase(s, allocation.backscatter[i], params, cfg.success_mode, rng);
        let (s, act) = active_phase(s, allocation.active[i], params, cfg.success_mode, rng);
        let (s, dropped) = arrival_phase(s, rng, params);
        outcome.delivered_backscatter.push(bs);
        outcome.delivered_active.push(act);
        outcome.dropped.push(dropped);
        outcome.total_delivered += bs + act;
        next.push(s);
    }
    Ok((next, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> TransmitterParams {
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
        }
    }

    fn cfg(n: usize) -> RadioConfig {
        RadioConfig {
            frame_slots: 7,
            transmitters: vec![params(); n],
            busy_min: 1,
            busy_max: 6,
            success_mode: SuccessMode::Bernoulli,
        }
    }

    fn st(queue: u32, energy: u32) -> TransmitterState {
        TransmitterState { queue, energy }
    }

    #[test]
    fn busy_slots_degenerate_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = cfg(1);
        c.busy_min = 3;
        c.busy_max = 3;
        assert_eq!(sample_busy_slots(&mut rng, &c), 3);
        c.busy_min = 0;
        c.busy_max = 0;
        assert_eq!(sample_busy_slots(&mut rng, &c), 0);
    }

    #[test]
    fn busy_slots_uniform_over_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = cfg(1);
        let draws = 100_000;
        let mut counts = [0u32; 7];
        for _ in 0..draws {
            let b = sample_busy_slots(&mut rng, &c);
            assert!((1..=6).contains(&b));
            counts[b as usize] += 1;
        }
        let expected = draws as f64 / 6.0;
        let mut chi2 = 0.0;
        for &c in &counts[1..] {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 6.0).abs() < 0.01, "freq {freq}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 5 degrees of freedom, 99.9th percentile is 20.5
        assert!(chi2 < 20.5, "chi2 {chi2}");
    }

    #[test]
    fn harvest_examples() {
        let p = params();
        assert_eq!(harvest_phase(st(0, 2), 4, 1, &p).unwrap(), st(0, 5));
        assert_eq!(harvest_phase(st(0, 5), 3, 0, &p).unwrap(), st(0, 5));
        assert_eq!(harvest_phase(st(3, 2), 4, 4, &p).unwrap(), st(3, 2));
        assert!(matches!(
            harvest_phase(st(0, 0), 2, 3, &p),
            Err(SimError::InfeasibleAllocation(_))
        ));
    }

    #[test]
    fn backscatter_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = params();
        assert_eq!(backscatter_phase(st(3, 0), 2, &p, SuccessMode::Bernoulli, &mut rng), (st(1, 0), 2));
        p.success_backscatter = 0.0;
        assert_eq!(backscatter_phase(st(3, 0), 2, &p, SuccessMode::Bernoulli, &mut rng), (st(1, 0), 0));
        assert_eq!(backscatter_phase(st(3, 4), 0, &p, SuccessMode::Bernoulli, &mut rng), (st(3, 4), 0));
    }

    #[test]
    fn active_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = params();
        assert_eq!(active_phase(st(4, 3), 5, &p, SuccessMode::Bernoulli, &mut rng), (st(0, 1), 4));
        assert_eq!(active_phase(st(4, 0), 5, &p, SuccessMode::Bernoulli, &mut rng), (st(4, 0), 0));
        assert_eq!(active_phase(st(4, 3), 0, &p, SuccessMode::Bernoulli, &mut rng), (st(4, 3), 0));
        // odd queue: last slot carries a partial payload
        assert_eq!(active_phase(st(3, 5), 5, &p, SuccessMode::Bernoulli, &mut rng), (st(0, 3), 3));
    }

    #[test]
    fn expected_mode_scales_by_success() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = params();
        p.success_active = 0.5;
        let (s, d) = active_phase(st(6, 5), 3, &p, SuccessMode::Expected, &mut rng);
        assert_eq!((s, d), (st(0, 2), 3));
    }

    #[test]
    fn arrival_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = params();
        assert_eq!(arrival_phase(st(4, 1), &mut rng, &p), (st(4, 1), 0));

        p.arrival_rate = 2.0;
        let n = 100_000;
        let total: u64 = (0..n).map(|_| sample_poisson(&mut rng, 2.0)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "mean {mean}");

        // clamp: find a draw of exactly 3 arrivals and check the cap
        p.arrival_rate = 3.0;
        loop {
            let mut probe = rng.clone();
            if sample_poisson(&mut probe, 3.0) == 3 {
                let (s, dropped) = arrival_phase(st(6, 0), &mut rng, &p);
                assert_eq!((s.queue, dropped), (7, 2));
                break;
            }
            let _ = sample_poisson(&mut rng, 3.0);
        }
    }

    #[test]
    fn zero_allocation_only_harvests() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = cfg(2);
        let states = vec![st(3, 1), st(0, 4)];
        let (next, out) = step_radio(&states, 3, &Allocation::idle(2), &c, &mut rng).unwrap();
        assert_eq!(next, vec![st(3, 4), st(0, 5)]);
        assert_eq!(out.total_delivered, 0);
    }

    #[test]
    fn step_matches_sequential_phases() {
        let c = cfg(1);
        let p = &c.transmitters[0];
        let alloc = Allocation { harvest: 1, backscatter: vec![2], active: vec![3] };
        let start = st(5, 1);
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = a.clone();
        let (next, out) = step_radio(&[start], 4, &alloc, &c, &mut a).unwrap();

        let s = harvest_phase(start, 4, 2, p).unwrap();
        let (s, d1) = backscatter_phase(s, 2, p, SuccessMode::Bernoulli, &mut b);
        let (s, d2) = active_phase(s, 3, p, SuccessMode::Bernoulli, &mut b);
        let (s, _) = arrival_phase(s, &mut b, p);
        assert_eq!(next[0], s);
        assert_eq!(out.total_delivered, d1 + d2);
        // lossless: delivered equals total drained
        assert_eq!(out.total_delivered, 5);
    }

    #[test]
    fn infeasible_allocation_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = cfg(1);
        let too_busy = Allocation { harvest: 2, backscatter: vec![2], active: vec![0] };
        assert!(step_radio(&[st(0, 0)], 3, &too_busy, &c, &mut rng).is_err());
        let too_long = Allocation { harvest: 0, backscatter: vec![1], active: vec![7] };
        assert!(step_radio(&[st(0, 0)], 3, &too_long, &c, &mut rng).is_err());
    }
}
