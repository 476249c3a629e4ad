use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{AgentKind, ExperimentConfig};
use crate::agents::{
    epsilon_at, select_action, BackscatterPolicy, D3qnAgent, Experience, GreedyPolicy, HttPolicy, Policy,
    QTable, RandomPolicy, TabularPolicy,
};
use crate::error::{Result, SimError};
use crate::mdp::{GatewayEnv, NetworkState, StepResult};
use crate::neural::QNetwork;

/// First line of every metrics file.
pub const METRICS_VERSION: &str = "# chainradio-metrics v1";

/// Labels of the random streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Env = 1,
    Agent = 2,
    Eval = 3,
    Policy = 4,
}

/// Independent stream `label` of the generator seeded with `seed`.
pub fn stream(seed: u64, label: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    rng
}

/// Per-episode aggregates. The first six fields are the metrics file columns.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_throughput: f64,
    pub fee_per_stored_unit: f64,
    pub epsilon: f64,
    pub seconds: f64,
    #[serde(skip)]
    pub total_fee: f64,
    #[serde(skip)]
    pub stored_units: u64,
    #[serde(skip)]
    pub steps: usize,
}

/// Tabular learner over observed states.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub table: QTable<Vec<u32>>,
    pub learning_rate: f64,
    pub discount: f64,
    rng: ChaCha8Rng,
}

impl QLearner {
    pub fn new(actions: usize, learning_rate: f64, discount: f64, rng: ChaCha8Rng) -> Self {
        QLearner {
            table: QTable::new(actions),
            learning_rate,
            discount,
            rng,
        }
    }
}

/// A policy together with whatever learning state it carries.
pub enum Agent {
    D3qn(Box<D3qnAgent<f64>>),
    Qlearning(QLearner),
    Fixed(Box<dyn Policy>),
}

impl Agent {
    /// Fresh agent of `kind` sized for `env`, drawing from the agent and
    /// policy streams of `seed`.
    pub fn build(kind: AgentKind, cfg: &ExperimentConfig, env: &GatewayEnv, seed: u64) -> Result<Agent> {
        Ok(match kind {
            AgentKind::D3qn => Agent::D3qn(Box::new(D3qnAgent::new(
                env.feature_width(),
                env.table().len(),
                cfg.train.clone(),
                stream(seed, Stream::Agent),
            )?)),
            AgentKind::Qlearning => Agent::Qlearning(QLearner::new(
                env.table().len(),
                cfg.train.q_learning_rate,
                cfg.train.discount,
                stream(seed, Stream::Agent),
            )),
            AgentKind::Htt => Agent::Fixed(Box::new(HttPolicy)),
            AgentKind::Backscatter => Agent::Fixed(Box::new(BackscatterPolicy)),
            AgentKind::Random => Agent::Fixed(Box::new(RandomPolicy::new(stream(seed, Stream::Policy)))),
        })
    }

    /// Greedy policy for evaluation; fixed policies are returned as is.
    pub fn into_policy(self) -> Box<dyn Policy> {
        match self {
            Agent::D3qn(a) => Box::new(a.greedy_policy()),
            Agent::Qlearning(q) => Box::new(TabularPolicy::new(q.table)),
            Agent::Fixed(p) => p,
        }
    }
}

struct Totals {
    reward: f64,
    stored: u64,
    fee: f64,
}

fn record(episode: usize, steps: usize, totals: Totals, epsilon: f64, seconds: f64) -> EpisodeRecord {
    let per_step = |x: f64| if steps == 0 { 0.0 } else { x / steps as f64 };
    EpisodeRecord {
        episode,
        mean_reward: per_step(totals.reward),
        mean_throughput: per_step(totals.stored as f64),
        fee_per_stored_unit: if totals.stored == 0 { 0.0 } else { totals.fee / totals.stored as f64 },
        epsilon,
        seconds,
        total_fee: totals.fee,
        stored_units: totals.stored,
        steps,
    }
}

fn episode_loop(
    env: &mut GatewayEnv,
    steps: usize,
    epsilon: f64,
    mut advance: impl FnMut(&mut GatewayEnv, &NetworkState) -> Result<StepResult>,
) -> Result<EpisodeRecord> {
    let mut state = env.reset();
    let mut totals = Totals { reward: 0.0, stored: 0, fee: 0.0 };
    for _ in 0..steps {
        let result = advance(env, &state)?;
        totals.reward += result.reward;
        totals.stored += u64::from(result.info.stored);
        totals.fee += result.info.fee_charged;
        state = result.next_state;
    }
    Ok(record(0, steps, totals, epsilon, 0.0))
}

/// Reset `env` and run `steps` frames. Learners explore with `epsilon`,
/// store every transition and train once per frame when `learn` is set.
pub fn run_episode(agent: &mut Agent, env: &mut GatewayEnv, steps: usize, epsilon: f64, learn: bool) -> Result<EpisodeRecord> {
    match agent {
        Agent::D3qn(a) => episode_loop(env, steps, epsilon, |env, state| {
            let features = env.encode::<f64>(state);
            let action = a.act(&features, env.table().mask_for_busy(state.busy_slots), epsilon)?;
            let result = env.step(action)?;
            if learn {
                a.remember(Experience {
                    state: features,
                    action,
                    reward: result.reward,
                    next_state: env.encode(&result.next_state),
                    next_busy: result.next_state.busy_slots,
                });
                a.train_step(env.table())?;
            }
            Ok(result)
        }),
        Agent::Qlearning(q) => episode_loop(env, steps, epsilon, |env, state| {
            let key = state.key();
            let mask = env.table().mask_for_busy(state.busy_slots);
            let action = match q.table.row(&key) {
                Some(values) => select_action(values, mask, epsilon, &mut q.rng)?,
                None => select_action(&vec![0.0; mask.len()], mask, epsilon, &mut q.rng)?,
            };
            let result = env.step(action)?;
            if learn {
                let next_mask = env.table().mask_for_busy(result.next_state.busy_slots);
                q.table.update(
                    &key,
                    action,
                    result.reward,
                    &result.next_state.key(),
                    next_mask,
                    q.learning_rate,
                    q.discount,
                );
            }
            Ok(result)
        }),
        Agent::Fixed(p) => play(p.as_mut(), env, steps),
    }
}

/// One episode of a fixed policy.
pub fn play(policy: &mut dyn Policy, env: &mut GatewayEnv, steps: usize) -> Result<EpisodeRecord> {
    episode_loop(env, steps, 0.0, |env, state| {
        let action = policy.select(env, state)?;
        env.step(action)
    })
}

/// Aggregate over evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub agent: String,
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_throughput: f64,
    /// Total fees over total stored units across all episodes.
    pub fee_per_stored_unit: f64,
}

impl Summary {
    fn from_records(agent: &str, records: &[EpisodeRecord]) -> Summary {
        let n = records.len() as f64;
        let mean = records.iter().map(|r| r.mean_reward).sum::<f64>() / n;
        let var = records.iter().map(|r| (r.mean_reward - mean).powi(2)).sum::<f64>() / n;
        let stored: u64 = records.iter().map(|r| r.stored_units).sum();
        let fee: f64 = records.iter().map(|r| r.total_fee).sum();
        Summary {
            agent: agent.to_string(),
            episodes: records.len(),
            mean_reward: mean,
            std_reward: var.sqrt(),
            mean_throughput: records.iter().map(|r| r.mean_throughput).sum::<f64>() / n,
            fee_per_stored_unit: if stored == 0 { 0.0 } else { fee / stored as f64 },
        }
    }
}

/// Run `episodes` greedy episodes of `policy` on a fresh environment drawn
/// from the evaluation stream of `seed`.
pub fn evaluate(policy: &mut dyn Policy, cfg: &ExperimentConfig, episodes: usize, seed: u64) -> Result<Summary> {
    if episodes == 0 {
        return Err(SimError::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let mut env = GatewayEnv::new(cfg.radio.clone(), cfg.chain.clone(), cfg.mdp.clone(), stream(seed, Stream::Eval))?;
    let records = (0..episodes)
        .map(|_| play(policy, &mut env, cfg.train.steps_per_episode))
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary::from_records(policy.name(), &records))
}

/// Outcome of a training run.
pub struct TrainOutcome {
    pub agent: Agent,
    pub records: Vec<EpisodeRecord>,
    /// First episode whose 100-episode moving average reward stays within 5%
    /// of the final moving average.
    pub convergence_episode: Option<usize>,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

/// Where training writes its files.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

impl TrainOutput {
    pub fn none() -> Self {
        TrainOutput { dir: None }
    }

    pub fn dir(path: impl Into<PathBuf>) -> Self {
        TrainOutput { dir: Some(path.into()) }
    }
}

struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let mut file = BufWriter::new(File::create(&path).map_err(|e| SimError::io(&path, e))?);
        writeln!(file, "{METRICS_VERSION}").map_err(|e| SimError::io(&path, e))?;
        Ok(MetricsWriter { inner: csv::Writer::from_writer(file), path })
    }

    fn write(&mut self, rec: &EpisodeRecord) -> Result<()> {
        self.inner.serialize(rec)?;
        self.inner.flush().map_err(|e| SimError::io(&self.path, e))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))
}

/// Train the configured agent for `cfg.train.episodes` episodes. With an
/// output directory, `metrics.csv` is written row by row and D3QN agents
/// leave `checkpoint.qnet` behind (plus numbered snapshots when a checkpoint
/// interval is set).
pub fn train(cfg: &ExperimentConfig, output: &TrainOutput) -> Result<TrainOutcome> {
    cfg.validate()?;
    let seed = cfg.experiment.seed;
    let mut env = GatewayEnv::new(cfg.radio.clone(), cfg.chain.clone(), cfg.mdp.clone(), stream(seed, Stream::Env))?;
    let mut agent = Agent::build(cfg.experiment.agent, cfg, &env, seed)?;
    let mut metrics = match &output.dir {
        Some(dir) => {
            create_dir(dir)?;
            Some(MetricsWriter::create(dir.join("metrics.csv"))?)
        }
        None => None,
    };

    let episodes = cfg.train.episodes;
    let schedule = cfg.train.schedule();
    let learns = cfg.experiment.agent.learns();
    let started = Instant::now();
    let mut records = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let epsilon = if learns { epsilon_at(episode, episodes.saturating_sub(1), schedule) } else { 0.0 };
        let mut rec = run_episode(&mut agent, &mut env, cfg.train.steps_per_episode, epsilon, learns)?;
        rec.episode = episode;
        if cfg.experiment.wall_clock {
            rec.seconds = started.elapsed().as_secs_f64();
        }
        if let Some(m) = metrics.as_mut() {
            m.write(&rec)?;
        }
        records.push(rec);
        let interval = cfg.experiment.checkpoint_interval;
        if let (Some(dir), Agent::D3qn(a)) = (&output.dir, &agent) {
            if interval > 0 && (episode + 1) % interval == 0 && episode + 1 < episodes {
                a.online.save(dir.join(format!("checkpoint-{:06}.qnet", episode + 1)))?;
            }
        }
    }

    let checkpoint_path = match (&output.dir, &agent) {
        (Some(dir), Agent::D3qn(a)) => {
            let path = dir.join("checkpoint.qnet");
            a.online.save(&path)?;
            Some(path)
        }
        _ => None,
    };
    let rewards: Vec<f64> = records.iter().map(|r| r.mean_reward).collect();
    Ok(TrainOutcome {
        agent,
        convergence_episode: convergence_episode(&rewards, 100, 0.05),
        records,
        metrics_path: metrics.map(|m| m.path),
        checkpoint_path,
    })
}

/// Trailing moving averages with window `window` (shorter at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// First index from which the moving average never leaves the band of
/// relative width `tolerance` around its final value.
pub fn convergence_episode(values: &[f64], window: usize, tolerance: f64) -> Option<usize> {
    let ma = moving_average(values, window);
    let last = *ma.last()?;
    let band = tolerance * last.abs();
    let mut first = ma.len();
    for i in (0..ma.len()).rev() {
        if (ma[i] - last).abs() > band {
            break;
        }
        first = i;
    }
    Some(first)
}

/// Policy to evaluate: the trained or checkpointed learner, or a fixed
/// baseline. Learners without a checkpoint are trained first.
pub fn policy_for(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Box<dyn Policy>> {
    match (cfg.experiment.agent, checkpoint) {
        (AgentKind::D3qn, Some(path)) => Ok(Box::new(GreedyPolicy::new(QNetwork::<f64>::load(path)?))),
        (kind, _) if kind.learns() => Ok(train(cfg, &TrainOutput::none())?.agent.into_policy()),
        (kind, _) => {
            let env = GatewayEnv::new(cfg.radio.clone(), cfg.chain.clone(), cfg.mdp.clone(), stream(0, Stream::Env))?;
            Ok(Agent::build(kind, cfg, &env, cfg.experiment.seed)?.into_policy())
        }
    }
}
