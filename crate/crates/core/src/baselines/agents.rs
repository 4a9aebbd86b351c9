use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ed::das_ed;
use super::uc::{das_uc, CommitmentSchedule, DayForecast, ForecastNoise, UcConfig};
use crate::env::GridEnv;
use crate::error::Result;
use crate::planner::{run_search, select_action, EnvRoot, PlannerConfig, SearchModel, SelectMode};
use crate::safety::{legalize, map_action, LegalAction, RawAction};

/// Step-wise decision interface shared by every evaluated policy.
pub trait Agent: Send {
    fn act(&mut self, env: &GridEnv) -> Result<LegalAction>;
}

/// Always submits the zero adjustment.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoopAgent;

impl Agent for NoopAgent {
    fn act(&mut self, env: &GridEnv) -> Result<LegalAction> {
        Ok(LegalAction::noop(env.case().n_gen()))
    }
}

/// Uniform continuous action, no switching, passed through the safety layer.
#[derive(Debug, Clone)]
pub struct RandomSafeAgent {
    rng: ChaCha8Rng,
}

impl RandomSafeAgent {
    pub fn new(seed: u64) -> Self {
        RandomSafeAgent {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn raw(&mut self, n: usize) -> RawAction {
        let a_p = (0..n).map(|_| self.rng.random_range(-1.0..=1.0)).collect();
        RawAction::new(a_p, n, n)
    }
}

impl Agent for RandomSafeAgent {
    fn act(&mut self, env: &GridEnv) -> Result<LegalAction> {
        let (case, state) = (env.case(), env.state());
        let raw = self.raw(case.controllable_ids().len());
        let bounds = env.action_space();
        let mapped = map_action(case, state, &raw, &bounds);
        Ok(legalize(
            case,
            state,
            &mapped,
            env.forecast(),
            &bounds,
            env.config().balance_redundancy,
        )
        .action)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DasConfig {
    pub uc: UcConfig,
    pub noise: ForecastNoise,
}

/// Day-ahead commitment fixed at reset, economic dispatch every step.
#[derive(Debug, Clone)]
pub struct DasAgent {
    pub schedule: CommitmentSchedule,
    /// Steps whose dispatch fell back to proportional sharing.
    pub fallbacks: usize,
}

impl DasAgent {
    /// Commit against a day-ahead forecast of the episode `env` has just
    /// started.
    pub fn plan(env: &GridEnv, cfg: &DasConfig, seed: u64) -> Result<Self> {
        let forecast = DayForecast::new(
            env.series(),
            env.start_index(),
            env.config().episode_len,
            &cfg.noise,
            seed,
        )?;
        Ok(DasAgent {
            schedule: das_uc(env.case(), &forecast, &env.state().gen_p, &cfg.uc),
            fallbacks: 0,
        })
    }
}

impl Agent for DasAgent {
    fn act(&mut self, env: &GridEnv) -> Result<LegalAction> {
        let (action, fallback) = das_ed(env, &self.schedule, env.config().balance_redundancy);
        self.fallbacks += fallback as usize;
        Ok(action)
    }
}

/// Greedy search policy of a trained model.
pub struct PlannerAgent<M> {
    model: Arc<M>,
    planner: PlannerConfig,
    rng: ChaCha8Rng,
}

impl<M: SearchModel + Send> PlannerAgent<M> {
    pub fn new(model: Arc<M>, planner: PlannerConfig, seed: u64) -> Self {
        PlannerAgent {
            model,
            planner,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<M: SearchModel + Send> Agent for PlannerAgent<M> {
    fn act(&mut self, env: &GridEnv) -> Result<LegalAction> {
        let obs = env.observation();
        let root = EnvRoot::new(env);
        let result = run_search(&*self.model, &obs, &root, &self.planner, &mut self.rng)?;
        let k = select_action(&result, 0.0, SelectMode::Eval, &mut self.rng);
        Ok(result.legal[k].clone())
    }
}
