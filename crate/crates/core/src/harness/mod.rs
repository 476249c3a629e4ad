//! Experiment orchestration: configuration, seeded runs, metrics files,
//! parameter sweeps and the built-in self-check.

mod config;
mod run;
mod selfcheck;
mod sweep;

pub use config::{AgentKind, ExperimentConfig, ExperimentSettings, Preset, QTABLE_ACTION_LIMIT};
pub use run::{
    convergence_episode, evaluate, moving_average, play, policy_for, run_episode, stream, train, Agent,
    EpisodeRecord, QLearner, Stream, Summary, TrainOutcome, TrainOutput, METRICS_VERSION,
};
pub use selfcheck::{race_attack_estimate, selfcheck, CheckResult, SelfcheckOptions};
pub use sweep::{sweep, SweepParam, SweepRow};
