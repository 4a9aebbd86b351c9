//! Evaluation harness and its report.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agents::Agent;
use crate::env::{EnvConfig, EpisodeTrace, GridEnv, TerminationReason, TimeSeries};
use crate::error::{Error, Result};
use crate::grid::{GenKind, GridCase};
use crate::training::last_start;

/// Per-step totals for plotting commitment against load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub load_mw: f64,
    /// Committed minimum output, balanced unit included.
    pub adjust_min_mw: f64,
    pub adjust_max_mw: f64,
    pub renewable_max_mw: f64,
    pub renewable_mw: f64,
}

fn curve_row(env: &GridEnv) -> CurveRow {
    let (case, s) = (env.case(), env.state());
    let (mut lo, mut hi) = (0.0, 0.0);
    for (i, g) in case.generators.iter().enumerate() {
        let online = match g.kind {
            GenKind::Balanced => true,
            GenKind::Thermal => s.gen_status[i],
            GenKind::Renewable => false,
        };
        if online {
            lo += g.p_min;
            hi += g.p_max;
        }
    }
    CurveRow {
        step: s.step,
        load_mw: s.load_p.iter().sum(),
        adjust_min_mw: lo,
        adjust_max_mw: hi,
        renewable_max_mw: s.renewable_p_max.iter().sum(),
        renewable_mw: case.renewable_ids().iter().map(|&i| s.gen_p[i]).sum(),
    }
}

/// One finished episode.
#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub trace: EpisodeTrace,
    pub curves: Vec<CurveRow>,
    pub wall_time_s: f64,
}

/// Drive `agent` until the episode ends.
pub fn run_episode(env: &mut GridEnv, agent: &mut dyn Agent) -> Result<EpisodeRun> {
    let clock = Instant::now();
    let mut trace = EpisodeTrace::default();
    let mut curves = vec![curve_row(env)];
    while !env.is_done() {
        let action = agent.act(env)?;
        let step = env.step(&action)?;
        trace.push(step.info);
        curves.push(curve_row(env));
    }
    Ok(EpisodeRun {
        trace,
        curves,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

/// Metrics of one episode. Rates are percentages of executed steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub start: usize,
    pub steps: usize,
    pub cumulative_reward: f64,
    pub wall_time_s: f64,
    pub voltage_rate: f64,
    pub reactive_rate: f64,
    pub balance_rate: f64,
    pub soft_overflow_rate: f64,
    pub hard_overflow_rate: f64,
    pub operating_cost: f64,
    pub renewable_consumption: f64,
    pub curtailment_mwh: f64,
    /// Balance-limit terminations.
    pub load_shedding: usize,
    pub illegal: usize,
    pub divergence: usize,
}

impl EpisodeMetrics {
    pub fn from_trace(trace: &EpisodeTrace, step_minutes: u32) -> Self {
        let steps = trace.steps.len();
        let rate = |f: &dyn Fn(&crate::env::Violations) -> bool| {
            if steps == 0 {
                0.0
            } else {
                100.0 * trace.steps.iter().filter(|s| f(&s.violations)).count() as f64
                    / steps as f64
            }
        };
        let (used, avail) = trace.steps.iter().fold((0.0, 0.0), |(u, a), s| {
            (u + s.renewable_p, a + s.renewable_p_max)
        });
        let ended = |r: TerminationReason| {
            trace.steps.last().is_some_and(|s| s.termination == Some(r)) as usize
        };
        EpisodeMetrics {
            seed: 0,
            start: 0,
            steps,
            cumulative_reward: trace.total_reward(),
            wall_time_s: 0.0,
            voltage_rate: rate(&|v| v.voltage),
            reactive_rate: rate(&|v| v.reactive),
            balance_rate: rate(&|v| v.balance),
            soft_overflow_rate: rate(&|v| v.soft_overflow),
            hard_overflow_rate: rate(&|v| v.hard_overflow),
            operating_cost: trace.steps.iter().map(|s| s.operating_cost).sum(),
            renewable_consumption: if avail > 0.0 {
                100.0 * used / avail
            } else {
                100.0
            },
            curtailment_mwh: trace.steps.iter().map(|s| s.curtailment).sum::<f64>()
                * f64::from(step_minutes)
                / 60.0,
            load_shedding: ended(TerminationReason::BalanceLimit),
            illegal: ended(TerminationReason::IllegalAction),
            divergence: ended(TerminationReason::Divergence),
        }
    }

    fn values(&self) -> [f64; 14] {
        [
            self.steps as f64,
            self.cumulative_reward,
            self.wall_time_s,
            self.voltage_rate,
            self.reactive_rate,
            self.balance_rate,
            self.soft_overflow_rate,
            self.hard_overflow_rate,
            self.operating_cost,
            self.renewable_consumption,
            self.curtailment_mwh,
            self.load_shedding as f64,
            self.illegal as f64,
            self.divergence as f64,
        ]
    }
}

/// Column names of [`EpisodeMetrics`] after the seed and start.
pub const METRIC_NAMES: [&str; 14] = [
    "steps",
    "cumulative_reward",
    "wall_time_s",
    "voltage_rate",
    "reactive_rate",
    "balance_rate",
    "soft_overflow_rate",
    "hard_overflow_rate",
    "operating_cost",
    "renewable_consumption",
    "curtailment_mwh",
    "load_shedding",
    "illegal",
    "divergence",
];

/// Mean and sample standard deviation per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Aggregate {
    fn of(rows: &[EpisodeMetrics]) -> Self {
        let n = rows.len() as f64;
        let vals: Vec<[f64; 14]> = rows.iter().map(EpisodeMetrics::values).collect();
        let mean: Vec<f64> = (0..14)
            .map(|k| vals.iter().map(|v| v[k]).sum::<f64>() / n)
            .collect();
        let std = (0..14)
            .map(|k| {
                if rows.len() < 2 {
                    0.0
                } else {
                    (vals.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                }
            })
            .collect();
        Aggregate { mean, std }
    }

    pub fn mean_of(&self, name: &str) -> f64 {
        self.mean[metric_index(name)]
    }

    pub fn std_of(&self, name: &str) -> f64 {
        self.std[metric_index(name)]
    }
}

fn metric_index(name: &str) -> usize {
    METRIC_NAMES
        .iter()
        .position(|m| *m == name)
        .unwrap_or_else(|| panic!("unknown metric {name}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: String,
    pub episodes: Vec<EpisodeMetrics>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn new(agent: impl Into<String>, episodes: Vec<EpisodeMetrics>) -> Self {
        let aggregate = Aggregate::of(&episodes);
        EvalReport {
            agent: agent.into(),
            episodes,
            aggregate,
        }
    }

    /// Per-seed rows followed by `mean` and `std` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["agent", "row", "seed", "start"];
        header.extend(METRIC_NAMES);
        w.write_record(&header)?;
        for e in &self.episodes {
            let mut row = vec![
                self.agent.clone(),
                "episode".into(),
                e.seed.to_string(),
                e.start.to_string(),
            ];
            row.extend(e.values().iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        for (label, vals) in [("mean", &self.aggregate.mean), ("std", &self.aggregate.std)] {
            let mut row = vec![
                self.agent.clone(),
                label.into(),
                String::new(),
                String::new(),
            ];
            row.extend(vals.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Side-by-side `metric,mean(agent),std(agent),...` table.
pub fn write_comparison(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["metric".to_string()];
    for r in reports {
        header.push(format!("{}_mean", r.agent));
        header.push(format!("{}_std", r.agent));
    }
    w.write_record(&header)?;
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let mut row = vec![name.to_string()];
        for r in reports {
            row.push(r.aggregate.mean[k].to_string());
            row.push(r.aggregate.std[k].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_curves(rows: &[CurveRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Episode placement for evaluation seed `seed`: start column and env seed.
pub fn episode_start(series: &TimeSeries, env: &EnvConfig, seed: u64) -> Result<(usize, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=last_start(series, env)?);
    Ok((start, rng.random()))
}

/// Run one episode per seed in parallel. `make` builds a fresh agent for an
/// episode from its freshly reset environment and seed.
pub fn evaluate<A, F>(
    name: &str,
    case: &Arc<GridCase>,
    series: &Arc<TimeSeries>,
    env: &EnvConfig,
    seeds: &[u64],
    make: F,
) -> Result<(EvalReport, Vec<EpisodeRun>)>
where
    A: Agent,
    F: Fn(&GridEnv, u64) -> Result<A> + Sync,
{
    let runs: Vec<(EpisodeMetrics, EpisodeRun)> = seeds
        .par_iter()
        .map(|&seed| {
            let (start, env_seed) = episode_start(series, env, seed)?;
            let mut e = GridEnv::reset(case.clone(), series.clone(), env.clone(), start, env_seed)?;
            let mut agent = make(&e, seed)?;
            let run = run_episode(&mut e, &mut agent)?;
            let mut m = EpisodeMetrics::from_trace(&run.trace, env.step_minutes);
            m.seed = seed;
            m.start = start;
            m.wall_time_s = run.wall_time_s;
            Ok((m, run))
        })
        .collect::<Result<_>>()?;
    let (metrics, runs) = runs.into_iter().unzip();
    Ok((EvalReport::new(name, metrics), runs))
}
