use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::agents::{d3qn_target, max_target, Experience};
use crate::chain::{attack_probability, ChainConfig};
use crate::error::Result;
use crate::mdp::{build_action_table, GatewayEnv};
use crate::neural::{grad_check_against, Architecture, QNetwork, Sample};
use crate::radio::{RadioConfig, SuccessMode, TransmitterParams};

/// Monte Carlo estimate of the double-spend success probability: the
/// attacker mines privately while the honest chain gains `confirmations`
/// blocks, then races from the remaining deficit.
pub fn race_attack_estimate<R: Rng + ?Sized>(q: f64, confirmations: u32, samples: usize, rng: &mut R) -> f64 {
    // once this far behind, the chance of catching up is negligible for q <= 0.3
    const GIVE_UP: i64 = 80;
    let n = i64::from(confirmations);
    let mut wins = 0usize;
    for _ in 0..samples {
        let (mut honest, mut attacker) = (0i64, 0i64);
        while honest < n {
            if rng.random::<f64>() < q {
                attacker += 1;
            } else {
                honest += 1;
            }
        }
        let mut deficit = n - attacker;
        while deficit > 0 && deficit < GIVE_UP {
            deficit += if rng.random::<f64>() < q { -1 } else { 1 };
        }
        if deficit <= 0 {
            wins += 1;
        }
    }
    wins as f64 / samples as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<22} {} ({:.2}s)", self.name, self.detail, self.seconds)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfcheckOptions {
    /// Fault injection: scale one analytic gradient entry before comparing,
    /// so the gradient check must fail.
    pub corrupt_backward: bool,
    pub seed: u64,
}

/// Run the quick invariant battery and report every check.
pub fn selfcheck(opts: SelfcheckOptions) -> Vec<CheckResult> {
    let checks: [(&'static str, fn(&SelfcheckOptions) -> Result<(bool, String)>); 5] = [
        ("attack_probability", check_attack),
        ("gradient", check_gradient),
        ("dueling_identity", check_dueling),
        ("action_count", check_action_count),
        ("transition_bounds", check_transitions),
    ];
    checks
        .iter()
        .map(|&(name, run)| {
            let started = Instant::now();
            let (passed, detail) = run(&opts).unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckResult {
                name,
                passed,
                detail,
                seconds: started.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn check_attack(opts: &SelfcheckOptions) -> Result<(bool, String)> {
    let mut ok = [1, 2, 6].iter().all(|&n| attack_probability::<f64>(0.0, n) == 0.0);
    ok &= [0.5, 0.7].iter().all(|&q| attack_probability::<f64>(q, 2) == 1.0);
    let point = attack_probability::<f64>(0.1, 2);
    ok &= (point - 0.056).abs() < 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    for (q, n) in [(0.05, 1), (0.1, 2), (0.2, 6)] {
        let mc = race_attack_estimate(q, n, 100_000, &mut rng);
        worst = worst.max((mc - attack_probability::<f64>(q, n)).abs());
    }
    ok &= worst <= 0.005;
    Ok((ok, format!("p(0.1,2)={point:.6}, worst race gap {worst:.4}")))
}

fn check_gradient(opts: &SelfcheckOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37);
    let arch = Architecture { inputs: 6, hidden: vec![8, 8], actions: 5 };
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let net = QNetwork::<f64>::new(arch.clone(), &mut rng);
        let x: Vec<f64> = (0..arch.inputs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action = rng.random_range(0..arch.actions);
        let target = rng.random_range(-2.0..2.0);
        let mut grads = net.backward(&x, action, target)?;
        if opts.corrupt_backward {
            let i = grads.len() - 1 - action;
            grads[i] = grads[i] * 1.5 + 0.1;
        }
        let sample = Sample { input: &x, action, target };
        let report = grad_check_against(&net, &grads, sample, 1e-5, 0..net.num_params())?;
        worst = worst.max(report.max_relative_error);
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn check_dueling(opts: &SelfcheckOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5151);
    let arch = Architecture { inputs: 5, hidden: vec![16, 16], actions: 7 };
    let net = QNetwork::<f64>::new(arch.clone(), &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x: Vec<f64> = (0..arch.inputs).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = net.forward_full(&x)?;
        let mean = f.q.iter().map(|q| q - f.value).sum::<f64>() / f.q.len() as f64;
        worst = worst.max(mean.abs());
    }
    let cfg = ExperimentConfig::reduced();
    let table = build_action_table(&cfg.radio, &cfg.chain, cfg.mdp.max_actions)?;
    let width = crate::mdp::feature_width(&cfg.radio, &cfg.chain);
    let net = QNetwork::<f64>::new(Architecture { inputs: width, hidden: vec![16], actions: table.len() }, &mut rng);
    let mut same = true;
    for _ in 0..20 {
        let batch: Vec<Experience<f64>> = (0..8)
            .map(|_| Experience {
                state: (0..width).map(|_| rng.random()).collect(),
                action: rng.random_range(0..table.len()),
                reward: rng.random_range(-1.0..1.0),
                next_state: (0..width).map(|_| rng.random()).collect(),
                next_busy: rng.random_range(cfg.radio.busy_min..=cfg.radio.busy_max),
            })
            .collect();
        let refs: Vec<&Experience<f64>> = batch.iter().collect();
        same &= d3qn_target(&refs, &net, &net.clone(), 0.9, &table)? == max_target(&refs, &net, 0.9, &table)?;
    }
    Ok((worst <= 1e-9 && same, format!("max |mean(Q - V)| {worst:.1e}, double-Q equivalence {same}")))
}

fn brute_force_count(y: u32, n: usize, k: usize, m: usize) -> usize {
    let dims = 2 * n + 1;
    let combos = (y as usize + 1).pow(dims as u32);
    let within = (0..combos)
        .filter(|&c| {
            let mut rest = c;
            let mut sum = 0;
            for _ in 0..dims {
                sum += rest % (y as usize + 1);
                rest /= y as usize + 1;
            }
            sum <= y as usize
        })
        .count();
    within * k * m
}

fn check_action_count(_: &SelfcheckOptions) -> Result<(bool, String)> {
    let mut ok = true;
    let mut sizes = Vec::new();
    for (y, n, k, m) in [(2, 1, 1, 1), (1, 1, 1, 1), (3, 2, 2, 3), (4, 1, 3, 2)] {
        let radio = RadioConfig {
            frame_slots: y,
            transmitters: vec![TransmitterParams::default(); n],
            busy_min: 0,
            busy_max: y,
            success_mode: SuccessMode::Bernoulli,
        };
        let chain = ChainConfig {
            num_chains: k,
            fee_intervals: m,
            attacker_share: vec![0.0; k],
            ..ExperimentConfig::reduced().chain
        };
        let table = build_action_table(&radio, &chain, 1_000_000)?;
        ok &= table.len() == brute_force_count(y, n, k, m);
        sizes.push(table.len());
    }
    ok &= sizes[0] == 10 && sizes[1] == 4;
    Ok((ok, format!("sizes {sizes:?}")))
}

fn check_transitions(opts: &SelfcheckOptions) -> Result<(bool, String)> {
    let cfg = ExperimentConfig::reduced();
    let mut env = GatewayEnv::with_seed(cfg.radio.clone(), cfg.chain.clone(), cfg.mdp.clone(), opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7777);
    env.reset();
    let mut violations = 0;
    let steps = 10_000;
    for _ in 0..steps {
        let feasible: Vec<usize> = env
            .current_mask()
            .iter()
            .enumerate()
            .filter_map(|(i, &ok)| ok.then_some(i))
            .collect();
        let action = feasible[rng.random_range(0..feasible.len())];
        let bound = env.table().action(action).allocation.max_deliverable(env.radio());
        let result = env.step(action)?;
        let radio_ok = result
            .next_state
            .transmitters
            .iter()
            .zip(&env.radio().transmitters)
            .all(|(t, p)| t.queue <= p.queue_capacity && t.energy <= p.energy_capacity);
        let pools_ok = (0..env.chain().num_chains).all(|k| env.mempool(k).total_size() <= env.chain().mempool_capacity);
        if !radio_ok || !pools_ok || result.info.delivered > bound || result.info.stored > result.info.delivered {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("{violations} violations in {steps} steps")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes_and_names_every_check() {
        let report = selfcheck(SelfcheckOptions::default());
        let names: Vec<&str> = report.iter().map(|r| r.name).collect();
        assert_eq!(
            names,
            ["attack_probability", "gradient", "dueling_identity", "action_count", "transition_bounds"]
        );
        for r in &report {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn corrupted_backward_fails_gradient_check() {
        let report = selfcheck(SelfcheckOptions { corrupt_backward: true, seed: 0 });
        let grad = report.iter().find(|r| r.name == "gradient").unwrap();
        assert!(!grad.passed);
    }

    #[test]
    fn race_matches_closed_form_roughly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mc = race_attack_estimate(0.1, 2, 200_000, &mut rng);
        assert!((mc - 0.056).abs() < 0.003, "{mc}");
        assert_eq!(race_attack_estimate(0.0, 3, 1000, &mut rng), 0.0);
    }
}
