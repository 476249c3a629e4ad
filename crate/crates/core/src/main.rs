use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chainradio::harness::{
    evaluate, moving_average, policy_for, selfcheck, sweep, train, AgentKind, ExperimentConfig, SelfcheckOptions,
    SweepParam, TrainOutput,
};
use chainradio::Result;

#[derive(Parser)]
#[command(name = "chainradio", version, about = "Backscatter radio gateway with blockchain storage: simulate, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write per-episode metrics
    Train(Common),
    /// Evaluate an agent greedily over fresh episodes
    Eval {
        #[command(flatten)]
        common: Common,
        /// Network checkpoint to evaluate instead of training first
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate across values of one parameter
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of busy_range, Y, lambda, q, K, Z
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0,0.05,0.1 (busy ranges as min:max)
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Run the built-in invariant checks
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the analytic gradient so the gradient check must fail
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training episodes (evaluation episodes for eval and sweep)
    #[arg(long)]
    episodes: Option<usize>,
    /// d3qn, qlearning, htt, backscatter or random
    #[arg(long)]
    agent: Option<AgentKind>,
}

impl Common {
    fn load(&self, episodes_are_eval: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::reduced(),
        };
        if let Some(seed) = self.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.experiment.output = out.clone();
        }
        if let Some(agent) = self.agent {
            cfg.experiment.agent = agent;
        }
        match (self.episodes, episodes_are_eval) {
            (Some(n), true) => cfg.experiment.eval_episodes = n,
            (Some(n), false) => cfg.train.episodes = n,
            (None, _) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.load(false)?;
            let out = train(&cfg, &TrainOutput::dir(&cfg.experiment.output))?;
            let rewards: Vec<f64> = out.records.iter().map(|r| r.mean_reward).collect();
            let last = moving_average(&rewards, 100).last().copied().unwrap_or(0.0);
            println!("agent {} trained for {} episodes", cfg.experiment.agent, out.records.len());
            println!("final moving-average reward {last:.4}");
            if let Some(c) = out.convergence_episode {
                println!("converged at episode {c}");
            }
            for path in out.metrics_path.iter().chain(&out.checkpoint_path) {
                println!("wrote {}", path.display());
            }
            Ok(true)
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load(true)?;
            let mut policy = policy_for(&cfg, checkpoint.as_deref())?;
            let s = evaluate(policy.as_mut(), &cfg, cfg.experiment.eval_episodes, cfg.experiment.seed)?;
            println!(
                "{}: reward {:.4} ± {:.4}, throughput {:.4}, fee per stored unit {:.4} over {} episodes",
                s.agent, s.mean_reward, s.std_reward, s.mean_throughput, s.fee_per_stored_unit, s.episodes
            );
            Ok(true)
        }
        Command::Sweep { common, param, values } => {
            let cfg = common.load(true)?;
            let param: SweepParam = param.parse()?;
            let rows = sweep(&cfg, param, &values, Some(&cfg.experiment.output))?;
            for r in &rows {
                println!(
                    "{}={}: reward {:.4} ± {:.4}, throughput {:.4}, fee per stored unit {:.4}",
                    r.param, r.value, r.mean_reward, r.std_reward, r.mean_throughput, r.fee_per_stored_unit
                );
            }
            println!("wrote {}", cfg.experiment.output.join(format!("sweep_{param}.csv")).display());
            Ok(true)
        }
        Command::Selfcheck { seed, corrupt_backward } => {
            let report = selfcheck(SelfcheckOptions { corrupt_backward, seed });
            for r in &report {
                println!("{r}");
            }
            Ok(report.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
