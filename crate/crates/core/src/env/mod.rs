//! The scheduling environment: operational rules, power-flow transition,
//! observations, forecasts and rewards.

mod profiles;
mod reward;
mod trace;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use profiles::{
    day_fraction, load_shape, make_profiles, solar_shape, TimeSeries, STEPS_PER_DAY,
};
pub use reward::{
    balance_reward, band_reward, compute_reward, cost_reward, operating_cost, overflow_reward,
    renewable_reward, reward_components, RewardComponents,
};
pub use trace::EpisodeTrace;

use crate::error::{Error, Result};
use crate::grid::{solve_power_flow, GenKind, GridCase, Injections, PfOptions, PowerFlowSolution};
use crate::safety::LegalAction;

/// Tolerance (MW) used when auditing actions against their bounds.
pub const LEGALITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_len: usize,
    pub step_minutes: u32,
    pub cooldown_steps: u32,
    pub outage_steps: u32,
    pub soft_overflow_limit: f64,
    pub hard_overflow_limit: f64,
    pub soft_overflow_patience: u32,
    /// Safety margin δ (MW) kept from the balanced unit's limits.
    pub balance_redundancy: f64,
    pub balance_upper_factor: f64,
    pub balance_lower_factor: f64,
    /// Weights for (overflow, renewable, balance, cost, reactive, voltage).
    pub reward_weights: [f64; 6],
    pub cost_normalizer: f64,
    pub forecast_noise_std: f64,
    pub penalty_clip: f64,
    pub terminal_reward: f64,
    pub pf_tol: f64,
    pub pf_max_iter: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            episode_len: 288,
            step_minutes: 5,
            cooldown_steps: 40,
            outage_steps: 16,
            soft_overflow_limit: 1.0,
            hard_overflow_limit: 1.35,
            soft_overflow_patience: 4,
            balance_redundancy: 5.0,
            balance_upper_factor: 1.10,
            balance_lower_factor: 0.90,
            reward_weights: [1.0, 2.0, 4.0, 1.0, 1.0, 1.0],
            cost_normalizer: 1e5,
            forecast_noise_std: 0.0,
            penalty_clip: 0.1,
            terminal_reward: -10.0,
            pf_tol: 1e-8,
            pf_max_iter: 20,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.episode_len == 0 {
            errs.push("episode_len must be positive");
        }
        if !(self.hard_overflow_limit > self.soft_overflow_limit) {
            errs.push("hard_overflow_limit must exceed soft_overflow_limit");
        }
        if !(self.balance_redundancy > 0.0) {
            errs.push("balance_redundancy must be positive");
        }
        if !(self.cost_normalizer > 0.0) {
            errs.push("cost_normalizer must be positive");
        }
        if !(self.forecast_noise_std >= 0.0) {
            errs.push("forecast_noise_std must be non-negative");
        }
        if !(self.penalty_clip > 0.0) {
            errs.push("penalty_clip must be positive");
        }
        if !(self.pf_tol > 0.0) || self.pf_max_iter == 0 {
            errs.push("power-flow tolerance and iteration cap must be positive");
        }
        if self.soft_overflow_patience == 0 {
            errs.push("soft_overflow_patience must be positive");
        }
        match errs.is_empty() {
            true => Ok(()),
            false => Err(Error::Config(errs.join("; "))),
        }
    }

    pub fn pf_options(&self) -> PfOptions<f64> {
        PfOptions {
            tol: self.pf_tol,
            max_iter: self.pf_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub step: usize,
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    pub gen_v: Vec<f64>,
    pub gen_status: Vec<bool>,
    pub steps_to_recover: Vec<u32>,
    pub steps_to_close: Vec<u32>,
    pub line_status: Vec<bool>,
    pub outage_timer: Vec<u32>,
    pub soft_overflow_counter: Vec<u32>,
    /// Loads in effect at this step (MW / MVAr).
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    /// Available renewable capacity at this step, renewable order.
    pub renewable_p_max: Vec<f64>,
}

/// Next-step values as seen by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub next_load_p: Vec<f64>,
    pub next_renewable_p_max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    EpisodeEnd,
    IllegalAction,
    Divergence,
    BalanceLimit,
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminationReason::EpisodeEnd => "episode end",
            TerminationReason::IllegalAction => "illegal action",
            TerminationReason::Divergence => "divergence",
            TerminationReason::BalanceLimit => "balance limit",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    pub voltage: bool,
    pub reactive: bool,
    pub balance: bool,
    pub soft_overflow: bool,
    pub hard_overflow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: usize,
    pub reward: f64,
    pub components: RewardComponents,
    pub violations: Violations,
    /// Renewable capacity left unused this step (MW).
    pub curtailment: f64,
    pub renewable_p: f64,
    pub renewable_p_max: f64,
    pub operating_cost: f64,
    pub slack_p: f64,
    pub grid_loss: f64,
    pub lines_out: usize,
    pub termination: Option<TerminationReason>,
    /// Human-readable cause when the episode ended on a rule.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Length of the flat observation vector for `case`.
pub fn observation_dim(case: &GridCase) -> usize {
    let (g, l, n, r) = (
        case.n_gen(),
        case.n_load(),
        case.n_line(),
        case.renewable_ids().len(),
    );
    3 * g + 3 * l + 2 * n + 3 * g + 2 * r + l + 1 + 2
}

/// Per-generator `(low, high)` adjustment bounds in MW for the move from the
/// current step to the next. `next_renewable_p_max` is the true ceiling at the
/// next step in renewable order.
pub fn action_space(
    case: &GridCase,
    state: &EnvState,
    next_renewable_p_max: &[f64],
) -> Vec<(f64, f64)> {
    let mut ren = 0;
    case.generators
        .iter()
        .enumerate()
        .map(|(i, g)| match g.kind {
            GenKind::Balanced => (0.0, 0.0),
            GenKind::Renewable => {
                let ceil = next_renewable_p_max[ren];
                ren += 1;
                let p = state.gen_p[i];
                (-p, ceil - p)
            }
            GenKind::Thermal if state.gen_status[i] => {
                let (p, ramp) = (state.gen_p[i], g.ramp_mw());
                ((-ramp).max(g.p_min - p), ramp.min(g.p_max - p))
            }
            GenKind::Thermal => (0.0, 0.0),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GridEnv {
    case: Arc<GridCase>,
    series: Arc<TimeSeries>,
    config: EnvConfig,
    start: usize,
    state: EnvState,
    prev_status: Vec<bool>,
    solution: PowerFlowSolution<f64>,
    forecast: Forecast,
    rng: ChaCha8Rng,
    done: bool,
}

impl GridEnv {
    /// Start an episode at `start_index` of `series`.
    ///
    /// Thermal units start online at mid-range, renewables at their ceiling.
    pub fn reset(
        case: Arc<GridCase>,
        series: Arc<TimeSeries>,
        config: EnvConfig,
        start_index: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        series.validate(&case)?;
        let end = start_index + config.episode_len;
        if end > series.len() {
            return Err(Error::SeriesTooShort {
                start: start_index,
                end,
                len: series.len(),
            });
        }
        let n_gen = case.n_gen();
        let t0 = start_index;
        let mut gen_p = vec![0.0; n_gen];
        let mut ren = 0;
        for (i, g) in case.generators.iter().enumerate() {
            gen_p[i] = match g.kind {
                GenKind::Thermal => 0.5 * (g.p_min + g.p_max),
                GenKind::Renewable => {
                    ren += 1;
                    series.renewable_p_max[ren - 1][t0]
                }
                GenKind::Balanced => 0.0,
            };
        }
        let state = EnvState {
            step: 0,
            gen_p,
            gen_q: vec![0.0; n_gen],
            gen_v: case.generators.iter().map(|g| g.v_set).collect(),
            gen_status: vec![true; n_gen],
            steps_to_recover: vec![0; n_gen],
            steps_to_close: vec![0; n_gen],
            line_status: vec![true; case.n_line()],
            outage_timer: vec![0; case.n_line()],
            soft_overflow_counter: vec![0; case.n_line()],
            load_p: series.load_p.iter().map(|c| c[t0]).collect(),
            load_q: series.load_q.iter().map(|c| c[t0]).collect(),
            renewable_p_max: series.renewable_p_max.iter().map(|c| c[t0]).collect(),
        };
        let inj = injections(&case, &state);
        let solution =
            solve_power_flow(&case, &inj, &state.line_status, &config.pf_options(), None);
        if !solution.converged {
            return Err(Error::InitialDivergence {
                mismatch: solution.max_mismatch,
            });
        }
        let prev_status = state.gen_status.clone();
        let mut env = GridEnv {
            case,
            series,
            config,
            start: start_index,
            state,
            prev_status,
            solution,
            forecast: Forecast {
                next_load_p: Vec::new(),
                next_renewable_p_max: Vec::new(),
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            done: false,
        };
        env.absorb_solution();
        env.forecast = env.draw_forecast();
        Ok(env)
    }

    pub fn case(&self) -> &GridCase {
        &self.case
    }

    pub fn case_arc(&self) -> &Arc<GridCase> {
        &self.case
    }

    pub fn series(&self) -> &TimeSeries {
        &self.series
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn solution(&self) -> &PowerFlowSolution<f64> {
        &self.solution
    }

    pub fn forecast(&self) -> &Forecast {
        &self.forecast
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn start_index(&self) -> usize {
        self.start
    }

    /// Series column for episode step `t`, held at the last column past the end.
    fn column(&self, t: usize) -> usize {
        (self.start + t).min(self.series.len() - 1)
    }

    /// True next-step renewable ceilings.
    pub fn next_renewable_p_max(&self) -> Vec<f64> {
        let c = self.column(self.state.step + 1);
        self.series.renewable_p_max.iter().map(|r| r[c]).collect()
    }

    /// Adjustment bounds for the next move.
    pub fn action_space(&self) -> Vec<(f64, f64)> {
        action_space(&self.case, &self.state, &self.next_renewable_p_max())
    }

    fn draw_forecast(&mut self) -> Forecast {
        let c = self.column(self.state.step + 1);
        let std = self.config.forecast_noise_std;
        let noise = Normal::new(0.0, std.max(0.0)).expect("finite std");
        let mut perturb = |v: f64| {
            if std > 0.0 {
                v * (1.0 + noise.sample(&mut self.rng))
            } else {
                v
            }
        };
        let next_load_p = self.series.load_p.iter().map(|l| perturb(l[c])).collect();
        let next_renewable_p_max = self
            .series
            .renewable_p_max
            .iter()
            .zip(self.case.renewable_ids())
            .map(|(r, g)| perturb(r[c]).clamp(0.0, self.case.generators[g].p_max))
            .collect();
        Forecast {
            next_load_p,
            next_renewable_p_max,
        }
    }

    fn absorb_solution(&mut self) {
        let bal = self.case.balanced_id();
        self.state.gen_p[bal] = self.solution.slack_p;
        self.state.gen_q.clone_from(&self.solution.gen_q);
        for (i, g) in self.case.generators.iter().enumerate() {
            self.state.gen_v[i] = self.solution.v_mag[self.case.bus_pos(g.bus)];
        }
    }

    /// Flat observation for the current state.
    pub fn observation(&self) -> Vec<f64> {
        let case = &self.case;
        let s = &self.state;
        let mut o = Vec::with_capacity(observation_dim(case));
        o.extend(&s.gen_p);
        o.extend(&s.gen_q);
        o.extend(&s.gen_v);
        o.extend(&s.load_p);
        o.extend(&s.load_q);
        o.extend(
            case.loads
                .iter()
                .map(|l| self.solution.v_mag[case.bus_pos(l.bus)]),
        );
        o.extend(&self.solution.rho);
        o.extend(s.line_status.iter().map(|&b| b as u8 as f64));
        o.extend(s.gen_status.iter().map(|&b| b as u8 as f64));
        o.extend(s.steps_to_recover.iter().map(|&c| c as f64));
        o.extend(s.steps_to_close.iter().map(|&c| c as f64));
        o.extend(&s.renewable_p_max);
        o.extend(&self.forecast.next_renewable_p_max);
        o.extend(&self.forecast.next_load_p);
        o.push(self.solution.grid_loss);
        let phase = 2.0 * std::f64::consts::PI * day_fraction(self.column(s.step));
        o.push(phase.sin());
        o.push(phase.cos());
        debug_assert_eq!(o.len(), observation_dim(case));
        o
    }

    /// Check `action` against the rules; `Err` carries the reason text.
    fn audit(
        &self,
        action: &LegalAction,
        bounds: &[(f64, f64)],
    ) -> std::result::Result<(), String> {
        let case = &self.case;
        let s = &self.state;
        let eps = LEGALITY_EPS;
        let switching = |i: usize| action.startup == Some(i) || action.shutdown == Some(i);
        for id in [action.startup, action.shutdown].into_iter().flatten() {
            if id >= case.n_gen() || case.generators[id].kind != GenKind::Thermal {
                return Err(format!("unit {id} cannot be switched"));
            }
        }
        if action.startup.is_some() && action.startup == action.shutdown {
            return Err("same unit started and shut down".into());
        }
        if let Some(j) = action.startup {
            if s.gen_status[j] || s.steps_to_recover[j] > 0 {
                return Err(format!("unit {j} cannot start up"));
            }
            let need = case.generators[j].p_min;
            if (action.delta_p[j] - need).abs() > eps {
                return Err(format!("unit {j} must start at p_min"));
            }
        }
        if let Some(k) = action.shutdown {
            let g = &case.generators[k];
            if !s.gen_status[k] || s.steps_to_close[k] > 0 || (s.gen_p[k] - g.p_min).abs() > eps {
                return Err(format!("unit {k} cannot shut down"));
            }
            if (action.delta_p[k] + s.gen_p[k]).abs() > eps {
                return Err(format!("unit {k} must shut down to zero"));
            }
        }
        for (i, g) in case.generators.iter().enumerate() {
            if g.kind == GenKind::Balanced || switching(i) {
                continue;
            }
            let d = action.delta_p[i];
            if !d.is_finite() {
                return Err(format!("unit {i}: non-finite adjustment"));
            }
            let (lo, hi) = bounds[i];
            if d < lo - eps || d > hi + eps {
                return Err(format!(
                    "unit {i}: adjustment {d:.6} outside [{lo:.6}, {hi:.6}]"
                ));
            }
        }
        Ok(())
    }

    /// Advance one step with a legalized action.
    pub fn step(&mut self, action: &LegalAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let n_gen = self.case.n_gen();
        if action.delta_p.len() != n_gen {
            return Err(Error::Dimension {
                what: "action delta_p",
                expected: n_gen,
                got: action.delta_p.len(),
            });
        }
        let case = Arc::clone(&self.case);
        let bounds = self.action_space();
        let next_ceiling = self.next_renewable_p_max();
        if let Err(detail) = self.audit(action, &bounds) {
            return Ok(self.terminate(TerminationReason::IllegalAction, detail));
        }

        // Setpoints and unit status.
        self.prev_status.clone_from(&self.state.gen_status);
        let s = &mut self.state;
        for c in s
            .steps_to_recover
            .iter_mut()
            .chain(s.steps_to_close.iter_mut())
        {
            *c = c.saturating_sub(1);
        }
        let bal = case.balanced_id();
        let mut ren = 0;
        for (i, g) in case.generators.iter().enumerate() {
            match g.kind {
                GenKind::Balanced => {}
                GenKind::Renewable => {
                    s.gen_p[i] = (s.gen_p[i] + action.delta_p[i]).clamp(0.0, next_ceiling[ren]);
                    ren += 1;
                }
                GenKind::Thermal => {
                    if action.startup == Some(i) {
                        s.gen_status[i] = true;
                        s.gen_p[i] = g.p_min;
                        s.steps_to_close[i] = self.config.cooldown_steps;
                    } else if action.shutdown == Some(i) {
                        s.gen_status[i] = false;
                        s.gen_p[i] = 0.0;
                        s.steps_to_recover[i] = self.config.cooldown_steps;
                    } else if s.gen_status[i] {
                        s.gen_p[i] = (s.gen_p[i] + action.delta_p[i]).clamp(g.p_min, g.p_max);
                    }
                }
            }
        }
        s.step += 1;
        let c = self.column(self.state.step);
        let s = &mut self.state;
        for (k, l) in self.series.load_p.iter().enumerate() {
            s.load_p[k] = l[c];
            s.load_q[k] = self.series.load_q[k][c];
        }
        for (j, r) in self.series.renewable_p_max.iter().enumerate() {
            s.renewable_p_max[j] = r[c];
        }

        // Power flow.
        let inj = injections(&case, &self.state);
        let sol = solve_power_flow(
            &case,
            &inj,
            &self.state.line_status,
            &self.config.pf_options(),
            Some(&self.solution),
        );
        if !sol.converged {
            let detail = format!("power flow mismatch {:.3e} p.u.", sol.max_mismatch);
            return Ok(self.terminate(TerminationReason::Divergence, detail));
        }
        self.solution = sol;
        self.absorb_solution();

        // Line automaton.
        let cfg = &self.config;
        let s = &mut self.state;
        let mut violations = Violations::default();
        for l in 0..case.n_line() {
            if !s.line_status[l] {
                s.outage_timer[l] = s.outage_timer[l].saturating_sub(1);
                if s.outage_timer[l] == 0 {
                    s.line_status[l] = true;
                }
                continue;
            }
            let rho = self.solution.rho[l];
            if rho > cfg.hard_overflow_limit {
                violations.hard_overflow = true;
                s.line_status[l] = false;
                s.outage_timer[l] = cfg.outage_steps;
                s.soft_overflow_counter[l] = 0;
            } else if rho > cfg.soft_overflow_limit {
                violations.soft_overflow = true;
                s.soft_overflow_counter[l] += 1;
                if s.soft_overflow_counter[l] >= cfg.soft_overflow_patience {
                    s.line_status[l] = false;
                    s.outage_timer[l] = cfg.outage_steps;
                    s.soft_overflow_counter[l] = 0;
                }
            } else {
                s.soft_overflow_counter[l] = 0;
            }
        }

        // Reward and balance rule.
        let (reward, components) = compute_reward(
            &case,
            &self.solution,
            &self.state.gen_p,
            &self.state.gen_status,
            &self.prev_status,
            &self.state.renewable_p_max,
            cfg.cost_normalizer,
            cfg.penalty_clip,
            &cfg.reward_weights,
        );
        let b = case.balanced();
        let slack = self.solution.slack_p;
        violations.balance = slack > b.p_max || slack < b.p_min;
        violations.voltage = case
            .buses
            .iter()
            .zip(&self.solution.v_mag)
            .any(|(bus, v)| *v > bus.v_max || *v < bus.v_min);
        violations.reactive = case.generators.iter().enumerate().any(|(i, g)| {
            self.state.gen_status[i]
                && (self.solution.gen_q[i] > g.q_max || self.solution.gen_q[i] < g.q_min)
        });
        let mut info = self.info(reward, components, violations);
        let breach = slack > cfg.balance_upper_factor * b.p_max
            || slack < cfg.balance_lower_factor * b.p_min;
        let (reward, termination) = if breach {
            info.detail = Some(format!(
                "balanced unit at {slack:.3} MW outside [{:.3}, {:.3}]",
                cfg.balance_lower_factor * b.p_min,
                cfg.balance_upper_factor * b.p_max
            ));
            (cfg.terminal_reward, Some(TerminationReason::BalanceLimit))
        } else if self.state.step >= cfg.episode_len {
            (reward, Some(TerminationReason::EpisodeEnd))
        } else {
            (reward, None)
        };
        info.reward = reward;
        info.termination = termination;
        self.done = termination.is_some();
        debug_assert!(self.state.gen_p[bal].is_finite());
        if !self.done {
            self.forecast = self.draw_forecast();
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info,
        })
    }

    fn info(&self, reward: f64, components: RewardComponents, violations: Violations) -> StepInfo {
        let ren_ids = self.case.renewable_ids();
        let renewable_p: f64 = ren_ids.iter().map(|&i| self.state.gen_p[i]).sum();
        let renewable_p_max: f64 = self.state.renewable_p_max.iter().sum();
        StepInfo {
            step: self.state.step,
            reward,
            components,
            violations,
            curtailment: (renewable_p_max - renewable_p).max(0.0),
            renewable_p,
            renewable_p_max,
            operating_cost: operating_cost(
                &self.case,
                &self.state.gen_p,
                &self.state.gen_status,
                &self.prev_status,
            ),
            slack_p: self.solution.slack_p,
            grid_loss: self.solution.grid_loss,
            lines_out: self.state.line_status.iter().filter(|s| !**s).count(),
            termination: None,
            detail: None,
        }
    }

    fn terminate(&mut self, reason: TerminationReason, detail: String) -> StepResult {
        self.done = true;
        let reward = self.config.terminal_reward;
        let mut info = self.info(reward, RewardComponents::default(), Violations::default());
        info.step = self.state.step;
        info.termination = Some(reason);
        info.detail = Some(detail);
        StepResult {
            observation: self.observation(),
            reward,
            done: true,
            info,
        }
    }
}

fn injections(case: &GridCase, s: &EnvState) -> Injections<f64> {
    Injections {
        gen_p: s.gen_p.clone(),
        gen_v: case.generators.iter().map(|g| g.v_set).collect(),
        gen_on: s.gen_status.clone(),
        load_p: s.load_p.clone(),
        load_q: s.load_q.clone(),
    }
}
