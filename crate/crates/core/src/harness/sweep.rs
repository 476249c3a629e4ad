use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{evaluate, policy_for, METRICS_VERSION};
use crate::error::{Result, SimError};

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Busy-slot range, written `min:max` (or a single count).
    BusyRange,
    /// Slots per frame.
    FrameSlots,
    /// Mean data arrivals per frame, applied to every transmitter.
    ArrivalRate,
    /// Attacker hash share, applied to every chain.
    AttackerShare,
    /// Number of chains.
    Chains,
    /// Background transactions per frame.
    Background,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::BusyRange => "busy_range",
            SweepParam::FrameSlots => "Y",
            SweepParam::ArrivalRate => "lambda",
            SweepParam::AttackerShare => "q",
            SweepParam::Chains => "K",
            SweepParam::Background => "Z",
        }
    }

    /// Copy of `base` with this parameter set to `value`, validated.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let bad = || SimError::InvalidConfig(format!("bad value `{value}` for {}", self.name()));
        let int = |s: &str| s.trim().parse::<u32>().map_err(|_| bad());
        let real = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        match self {
            SweepParam::BusyRange => {
                let (lo, hi) = match value.split_once(':') {
                    Some((a, b)) => (int(a)?, int(b)?),
                    None => (int(value)?, int(value)?),
                };
                cfg.radio.busy_min = lo;
                cfg.radio.busy_max = hi;
            }
            SweepParam::FrameSlots => {
                let y = int(value)?;
                cfg.radio.frame_slots = y;
                cfg.radio.busy_max = cfg.radio.busy_max.min(y);
                cfg.radio.busy_min = cfg.radio.busy_min.min(cfg.radio.busy_max);
            }
            SweepParam::ArrivalRate => {
                let lambda = real(value)?;
                cfg.radio.transmitters.iter_mut().for_each(|t| t.arrival_rate = lambda);
            }
            SweepParam::AttackerShare => {
                let q = real(value)?;
                cfg.chain.attacker_share.fill(q);
            }
            SweepParam::Chains => {
                let k = int(value)? as usize;
                let q = cfg.chain.attacker_share.first().copied().unwrap_or(0.0);
                cfg.chain.num_chains = k;
                cfg.chain.attacker_share = vec![q; k];
            }
            SweepParam::Background => cfg.chain.background_count = int(value)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "busy_range" => SweepParam::BusyRange,
            "Y" | "frame_slots" => SweepParam::FrameSlots,
            "lambda" | "λ" | "arrival_rate" => SweepParam::ArrivalRate,
            "q" | "attacker_share" => SweepParam::AttackerShare,
            "K" | "num_chains" => SweepParam::Chains,
            "Z" | "background_count" => SweepParam::Background,
            _ => return Err(SimError::UnknownParameter(s.to_string())),
        })
    }
}

/// One evaluated point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub agent: String,
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_throughput: f64,
    pub fee_per_stored_unit: f64,
}

/// Evaluate the configured agent once per value of `param`. Learning agents
/// are retrained from scratch for every value. With `out_dir`, the rows are
/// also written to `sweep_<param>.csv` there.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[String],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(SimError::InvalidConfig("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        let mut policy = policy_for(cfg, None)?;
        let s = evaluate(policy.as_mut(), cfg, cfg.experiment.eval_episodes, cfg.experiment.seed)?;
        rows.push(SweepRow {
            param: param.name().to_string(),
            value: value.trim().to_string(),
            agent: s.agent,
            episodes: s.episodes,
            mean_reward: s.mean_reward,
            std_reward: s.std_reward,
            mean_throughput: s.mean_throughput,
            fee_per_stored_unit: s.fee_per_stored_unit,
        });
    }
    if let Some(dir) = out_dir {
        write_rows(&dir.join(format!("sweep_{}.csv", param.name())), &rows)?;
    }
    Ok(rows)
}

fn write_rows(path: &PathBuf, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    writeln!(file, "{METRICS_VERSION}").map_err(|e| SimError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}
