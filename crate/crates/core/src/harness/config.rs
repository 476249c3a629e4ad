use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::agents::TrainConfig;
use crate::chain::ChainConfig;
use crate::error::{Result, SimError};
use crate::mdp::{allocation_count, MdpConfig};
use crate::radio::{RadioConfig, SuccessMode, TransmitterParams};

/// Action tables beyond this size need `allow_large_qtable` for tabular
/// learning.
pub const QTABLE_ACTION_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    D3qn,
    Qlearning,
    Htt,
    Backscatter,
    Random,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::D3qn,
        AgentKind::Qlearning,
        AgentKind::Htt,
        AgentKind::Backscatter,
        AgentKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::D3qn => "d3qn",
            AgentKind::Qlearning => "qlearning",
            AgentKind::Htt => "htt",
            AgentKind::Backscatter => "backscatter",
            AgentKind::Random => "random",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, AgentKind::D3qn | AgentKind::Qlearning)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SimError::InvalidConfig(format!("unknown agent `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Small state and action spaces that train in minutes.
    Reduced,
    /// Full-size parameters.
    Full,
}

/// Run-level settings: which agent, seeds, output and evaluation length.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub agent: AgentKind,
    pub seed: u64,
    pub output: PathBuf,
    pub eval_episodes: usize,
    /// Save a checkpoint every this many episodes (0: only at the end).
    pub checkpoint_interval: usize,
    pub allow_large_qtable: bool,
    /// Record elapsed time in the `seconds` column. Off by default so that
    /// metrics files are reproducible byte for byte.
    pub wall_clock: bool,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            agent: AgentKind::D3qn,
            seed: 1,
            output: PathBuf::from("out"),
            eval_episodes: 100,
            checkpoint_interval: 0,
            allow_large_qtable: false,
            wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub radio: RadioConfig,
    pub chain: ChainConfig,
    pub mdp: MdpConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentSettings,
}

impl ExperimentConfig {
    /// Desk-scale preset: five-slot frames, small queues and batteries, one
    /// chain with a short mempool.
    pub fn reduced() -> Self {
        let tx = TransmitterParams {
            queue_capacity: 5,
            energy_capacity: 3,
            arrival_rate: 3.0,
            ..TransmitterParams::default()
        };
        ExperimentConfig {
            radio: RadioConfig {
                frame_slots: 5,
                transmitters: vec![tx; 2],
                busy_min: 1,
                busy_max: 4,
                success_mode: SuccessMode::Bernoulli,
            },
            chain: ChainConfig {
                num_chains: 1,
                mempool_capacity: 15,
                block_capacity: 10,
                background_count: 2,
                background_size_max: 5,
                fee_min: 0.01,
                fee_max: 0.8,
                fee_intervals: 4,
                attacker_share: vec![0.05],
                confirmation_depth: 2,
                fee_on_submit: false,
                refund_on_attack: false,
            },
            mdp: MdpConfig::default(),
            train: TrainConfig {
                episodes: 3000,
                ..TrainConfig::default()
            },
            experiment: ExperimentSettings::default(),
        }
    }

    /// Full-size parameters: seven-slot frames, three chains, 50000 episodes.
    pub fn full() -> Self {
        ExperimentConfig {
            radio: RadioConfig {
                frame_slots: 7,
                transmitters: vec![TransmitterParams::default(); 2],
                busy_min: 1,
                busy_max: 6,
                success_mode: SuccessMode::Bernoulli,
            },
            chain: ChainConfig {
                num_chains: 3,
                mempool_capacity: 50,
                block_capacity: 30,
                background_count: 5,
                background_size_max: 10,
                fee_min: 0.01,
                fee_max: 0.8,
                fee_intervals: 4,
                attacker_share: vec![0.05; 3],
                confirmation_depth: 2,
                fee_on_submit: false,
                refund_on_attack: false,
            },
            mdp: MdpConfig::default(),
            train: TrainConfig::default(),
            experiment: ExperimentSettings::default(),
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Reduced => Self::reduced(),
            Preset::Full => Self::full(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        self.chain.validate()?;
        self.mdp.validate()?;
        self.train.validate()?;
        if self.experiment.agent == AgentKind::Qlearning && !self.experiment.allow_large_qtable {
            let size = self.action_count();
            if size > QTABLE_ACTION_LIMIT as u128 {
                return Err(SimError::ConfigTooLarge {
                    size,
                    limit: QTABLE_ACTION_LIMIT,
                });
            }
        }
        Ok(())
    }

    /// Size of the action grid this configuration induces.
    pub fn action_count(&self) -> u128 {
        allocation_count(self.radio.frame_slots, 2 * self.radio.num_transmitters() as u32 + 1)
            * self.chain.num_chains as u128
            * self.chain.fee_intervals as u128
    }

    /// Parse a configuration document. The `preset` key of `[experiment]`
    /// picks the base values (default `reduced`); every other key overrides
    /// one field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let preset = raw.experiment.as_ref().and_then(|e| e.preset).unwrap_or(Preset::Reduced);
        let mut cfg = Self::preset(preset);
        if let Some(r) = raw.radio {
            r.apply(&mut cfg.radio)?;
        }
        if let Some(c) = raw.chain {
            c.apply(&mut cfg.chain)?;
        }
        if let Some(t) = raw.train {
            t.apply(&mut cfg.train);
        }
        if let Some(e) = raw.experiment {
            e.apply(&mut cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn expand(&self, n: usize, name: &str) -> Result<Vec<T>> {
        match self {
            OneOrMany::One(v) => Ok(vec![v.clone(); n]),
            OneOrMany::Many(v) if v.len() == n => Ok(v.clone()),
            OneOrMany::Many(v) => Err(SimError::InvalidConfig(format!(
                "`{name}` lists {} values for {n} entries",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    radio: Option<RawRadio>,
    chain: Option<RawChain>,
    train: Option<RawTrain>,
    experiment: Option<RawExperiment>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRadio {
    frame_slots: Option<u32>,
    num_transmitters: Option<usize>,
    busy_min: Option<u32>,
    busy_max: Option<u32>,
    success_mode: Option<SuccessMode>,
    queue_capacity: Option<OneOrMany<u32>>,
    energy_capacity: Option<OneOrMany<u32>>,
    harvest_rate: Option<OneOrMany<u32>>,
    active_energy: Option<OneOrMany<u32>>,
    backscatter_rate: Option<OneOrMany<u32>>,
    active_rate: Option<OneOrMany<u32>>,
    success_backscatter: Option<OneOrMany<f64>>,
    success_active: Option<OneOrMany<f64>>,
    arrival_rate: Option<OneOrMany<f64>>,
}

fn per_item<P, T: Clone>(
    items: &mut [P],
    value: &Option<OneOrMany<T>>,
    name: &str,
    set: impl Fn(&mut P, T),
) -> Result<()> {
    if let Some(v) = value {
        let values = v.expand(items.len(), name)?;
        for (p, x) in items.iter_mut().zip(values) {
            set(p, x);
        }
    }
    Ok(())
}

impl RawRadio {
    fn apply(self, radio: &mut RadioConfig) -> Result<()> {
        if let Some(n) = self.num_transmitters {
            let template = radio.transmitters.first().cloned().unwrap_or_default();
            radio.transmitters.resize(n, template);
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { radio.$field = v; }
            )*};
        }
        set!(frame_slots, busy_min, busy_max, success_mode);
        let tx = &mut radio.transmitters;
        per_item(tx, &self.queue_capacity, "queue_capacity", |p, v| p.queue_capacity = v)?;
        per_item(tx, &self.energy_capacity, "energy_capacity", |p, v| p.energy_capacity = v)?;
        per_item(tx, &self.harvest_rate, "harvest_rate", |p, v| p.harvest_rate = v)?;
        per_item(tx, &self.active_energy, "active_energy", |p, v| p.active_energy = v)?;
        per_item(tx, &self.backscatter_rate, "backscatter_rate", |p, v| p.backscatter_rate = v)?;
        per_item(tx, &self.active_rate, "active_rate", |p, v| p.active_rate = v)?;
        per_item(tx, &self.success_backscatter, "success_backscatter", |p, v| p.success_backscatter = v)?;
        per_item(tx, &self.success_active, "success_active", |p, v| p.success_active = v)?;
        per_item(tx, &self.arrival_rate, "arrival_rate", |p, v| p.arrival_rate = v)?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    num_chains: Option<usize>,
    mempool_capacity: Option<u32>,
    block_capacity: Option<u32>,
    background_count: Option<u32>,
    background_size_max: Option<u32>,
    fee_min: Option<f64>,
    fee_max: Option<f64>,
    fee_intervals: Option<usize>,
    attacker_share: Option<OneOrMany<f64>>,
    confirmation_depth: Option<u32>,
    fee_on_submit: Option<bool>,
    refund_on_attack: Option<bool>,
}

impl RawChain {
    fn apply(self, chain: &mut ChainConfig) -> Result<()> {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { chain.$field = v; }
            )*};
        }
        set!(
            num_chains,
            mempool_capacity,
            block_capacity,
            background_count,
            background_size_max,
            fee_min,
            fee_max,
            fee_intervals,
            confirmation_depth,
            fee_on_submit,
            refund_on_attack
        );
        match &self.attacker_share {
            Some(q) => chain.attacker_share = q.expand(chain.num_chains, "attacker_share")?,
            None => {
                let q = chain.attacker_share.first().copied().unwrap_or(0.0);
                chain.attacker_share.resize(chain.num_chains, q);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    episodes: Option<usize>,
    steps_per_episode: Option<usize>,
    batch_size: Option<usize>,
    discount: Option<f64>,
    epsilon_start: Option<f64>,
    epsilon_end: Option<f64>,
    target_sync: Option<u64>,
    learning_rate: Option<f64>,
    replay_capacity: Option<usize>,
    q_learning_rate: Option<f64>,
    hidden: Option<Vec<usize>>,
}

impl RawTrain {
    fn apply(self, train: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { train.$field = v; }
            )*};
        }
        set!(
            episodes,
            steps_per_episode,
            batch_size,
            discount,
            epsilon_start,
            epsilon_end,
            target_sync,
            learning_rate,
            replay_capacity,
            q_learning_rate,
            hidden
        );
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    preset: Option<Preset>,
    agent: Option<AgentKind>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    eval_episodes: Option<usize>,
    checkpoint_interval: Option<usize>,
    allow_large_qtable: Option<bool>,
    wall_clock: Option<bool>,
    reward_per_unit: Option<f64>,
    fee_offset: Option<f64>,
    max_actions: Option<usize>,
}

impl RawExperiment {
    fn apply(self, cfg: &mut ExperimentConfig) {
        let e = &mut cfg.experiment;
        macro_rules! set {
            ($target:expr; $($field:ident),*) => {$(
                if let Some(v) = self.$field { $target.$field = v; }
            )*};
        }
        set!(e; agent, seed, output, eval_episodes, checkpoint_interval, allow_large_qtable, wall_clock);
        set!(cfg.mdp; reward_per_unit, fee_offset, max_actions);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ExperimentConfig::reduced().validate().unwrap();
        ExperimentConfig::full().validate().unwrap();
        assert_eq!(ExperimentConfig::reduced().action_count(), 1008);
    }

    #[test]
    fn empty_document_is_reduced_preset() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::reduced());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            [radio]
            frame_slots = 6
            num_transmitters = 3
            arrival_rate = [1.0, 2.0, 3.0]
            success_active = 1.0

            [chain]
            num_chains = 2
            attacker_share = 0.1

            [train]
            episodes = 10
            hidden = [8, 8]

            [experiment]
            agent = "random"
            seed = 42
            fee_offset = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.radio.frame_slots, 6);
        assert_eq!(cfg.radio.num_transmitters(), 3);
        let rates: Vec<f64> = cfg.radio.transmitters.iter().map(|t| t.arrival_rate).collect();
        assert_eq!(rates, vec![1.0, 2.0, 3.0]);
        assert!(cfg.radio.transmitters.iter().all(|t| t.success_active == 1.0));
        assert_eq!(cfg.chain.attacker_share, vec![0.1, 0.1]);
        assert_eq!(cfg.train.hidden, vec![8, 8]);
        assert_eq!(cfg.experiment.agent, AgentKind::Random);
        assert_eq!(cfg.experiment.seed, 42);
        assert_eq!(cfg.mdp.fee_offset, 0.5);
    }

    #[test]
    fn full_preset_base() {
        let cfg = ExperimentConfig::from_toml("[experiment]\npreset = \"full\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::full());
    }

    #[test]
    fn unknown_keys_are_errors() {
        for doc in ["[radio]\nslots = 3\n", "[extra]\nx = 1\n", "[train]\nepisode = 4\n"] {
            assert!(matches!(ExperimentConfig::from_toml(doc), Err(SimError::InvalidConfig(_))), "{doc}");
        }
    }

    #[test]
    fn length_mismatch_is_error() {
        let doc = "[radio]\nnum_transmitters = 2\narrival_rate = [1.0]\n";
        assert!(ExperimentConfig::from_toml(doc).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("[train]\ndiscount = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[radio]\nbusy_max = 9\n").is_err());
    }

    #[test]
    fn qtable_guard() {
        let doc = "[experiment]\npreset = \"full\"\nagent = \"qlearning\"\n";
        assert!(matches!(ExperimentConfig::from_toml(doc), Err(SimError::ConfigTooLarge { .. })));
        let ok = format!("{doc}allow_large_qtable = true\n");
        ExperimentConfig::from_toml(&ok).unwrap();
    }
}
