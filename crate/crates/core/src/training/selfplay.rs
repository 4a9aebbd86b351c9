use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Trajectory;
use crate::env::{EnvConfig, EpisodeTrace, GridEnv, TimeSeries};
use crate::error::{Error, Result};
use crate::grid::GridCase;
use crate::planner::{run_search, select_action, EnvRoot, PlannerConfig, SearchModel, SelectMode};

/// Where and how one episode is played.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub case: Arc<GridCase>,
    pub series: Arc<TimeSeries>,
    pub env: EnvConfig,
    pub planner: PlannerConfig,
    pub mode: SelectMode,
    pub temperature: f64,
    pub seed: u64,
    /// Fixed start column; drawn from the seed when absent.
    pub start: Option<usize>,
}

/// Largest valid start column for `series`.
pub fn last_start(series: &TimeSeries, env: &EnvConfig) -> Result<usize> {
    series
        .len()
        .checked_sub(env.episode_len)
        .ok_or(Error::SeriesTooShort {
            start: 0,
            end: env.episode_len,
            len: series.len(),
        })
}

/// Play one episode with search at every step.
pub fn play_episode<M: SearchModel + ?Sized>(
    model: &M,
    spec: &EpisodeSpec,
) -> Result<(Trajectory, EpisodeTrace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = match spec.start {
        Some(s) => s,
        None => rng.random_range(0..=last_start(&spec.series, &spec.env)?),
    };
    let mut env = GridEnv::reset(
        spec.case.clone(),
        spec.series.clone(),
        spec.env.clone(),
        start,
        rng.random(),
    )?;
    let mut traj = Trajectory::new(env.observation(), spec.seed, start);
    let mut trace = EpisodeTrace::default();
    while !env.is_done() {
        let obs = env.observation();
        let result = {
            let root = EnvRoot::new(&env);
            run_search(model, &obs, &root, &spec.planner, &mut rng)?
        };
        let k = select_action(&result, spec.temperature, spec.mode, &mut rng);
        let step = env.step(&result.legal[k])?;
        traj.observations.push(step.observation);
        traj.actions.push(result.candidates[k].clone());
        traj.legal.push(result.legal[k].clone());
        traj.rewards.push(step.reward);
        traj.policies.push(result.pi);
        traj.root_values.push(result.root_value);
        traj.candidates.push(result.candidates);
        traj.termination = step.info.termination;
        trace.push(step.info);
    }
    Ok((traj, trace))
}
