//! Per-step reward components.

use serde::{Deserialize, Serialize};

use crate::grid::{GridCase, PowerFlowSolution};

/// The six reward parts in weight order
/// (overflow, renewable, balance, cost, reactive, voltage).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub overflow: f64,
    pub renewable: f64,
    pub balance: f64,
    pub cost: f64,
    pub reactive: f64,
    pub voltage: f64,
}

impl RewardComponents {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.overflow,
            self.renewable,
            self.balance,
            self.cost,
            self.reactive,
            self.voltage,
        ]
    }

    /// Floor the penalty parts (balance, cost, reactive, voltage) at `-clip`.
    pub fn clipped(&self, clip: f64) -> Self {
        RewardComponents {
            balance: self.balance.max(-clip),
            cost: self.cost.max(-clip),
            reactive: self.reactive.max(-clip),
            voltage: self.voltage.max(-clip),
            ..*self
        }
    }

    pub fn weighted(&self, w: &[f64; 6]) -> f64 {
        self.as_array().iter().zip(w).map(|(r, w)| r * w).sum()
    }
}

pub fn overflow_reward(rho: &[f64]) -> f64 {
    if rho.is_empty() {
        return 1.0;
    }
    1.0 - rho.iter().map(|r| r.min(1.0)).sum::<f64>() / rho.len() as f64
}

/// Renewable consumption rate; 1 when no renewable capacity is available.
pub fn renewable_reward(p: &[f64], p_max: &[f64]) -> f64 {
    let cap: f64 = p_max.iter().sum();
    if cap <= 0.0 {
        return 1.0;
    }
    p.iter().sum::<f64>() / cap
}

pub fn balance_reward(p_bal: f64, lower: f64, upper: f64) -> f64 {
    let span = upper - lower;
    -((p_bal - upper).max(0.0) + (lower - p_bal).max(0.0)) / span
}

/// `exp(-Σ normalized band excess) - 1` over `(value, lower, upper)` triples.
pub fn band_reward<I>(items: I) -> f64
where
    I: IntoIterator<Item = (f64, f64, f64)>,
{
    let excess: f64 = items
        .into_iter()
        .map(|(v, lo, hi)| ((v - hi).max(0.0) + (lo - v).max(0.0)) / (hi - lo))
        .sum();
    (-excess).exp() - 1.0
}

/// Operating cost in $ for one step: quadratic running cost of every online
/// unit plus the on/off cost of every unit that switched.
pub fn operating_cost(case: &GridCase, gen_p: &[f64], on: &[bool], prev_on: &[bool]) -> f64 {
    case.generators
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let running = if on[i] { g.running_cost(gen_p[i]) } else { 0.0 };
            let switch = if on[i] != prev_on[i] { g.c_onoff } else { 0.0 };
            running + switch
        })
        .sum()
}

pub fn cost_reward(cost: f64, normalizer: f64) -> f64 {
    -cost / normalizer
}

/// Raw (unclipped) components for a solved step.
///
/// `gen_p` must already carry the solved balanced output; `ren_ceiling` is
/// the available renewable capacity at this step in renewable order.
pub fn reward_components(
    case: &GridCase,
    sol: &PowerFlowSolution<f64>,
    gen_p: &[f64],
    on: &[bool],
    prev_on: &[bool],
    ren_ceiling: &[f64],
    cost_normalizer: f64,
) -> RewardComponents {
    let ren_ids = case.renewable_ids();
    let ren_p: Vec<f64> = ren_ids.iter().map(|&i| gen_p[i]).collect();
    let bal = case.balanced();
    let reactive = band_reward(
        case.generators
            .iter()
            .enumerate()
            .filter(|(i, _)| on[*i])
            .map(|(i, g)| (sol.gen_q[i], g.q_min, g.q_max)),
    );
    let voltage = band_reward(
        case.buses
            .iter()
            .zip(&sol.v_mag)
            .map(|(b, v)| (*v, b.v_min, b.v_max)),
    );
    RewardComponents {
        overflow: overflow_reward(&sol.rho),
        renewable: renewable_reward(&ren_p, ren_ceiling),
        balance: balance_reward(sol.slack_p, bal.p_min, bal.p_max),
        cost: cost_reward(operating_cost(case, gen_p, on, prev_on), cost_normalizer),
        reactive,
        voltage,
    }
}

/// Total reward and clipped components.
#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    case: &GridCase,
    sol: &PowerFlowSolution<f64>,
    gen_p: &[f64],
    on: &[bool],
    prev_on: &[bool],
    ren_ceiling: &[f64],
    cost_normalizer: f64,
    penalty_clip: f64,
    weights: &[f64; 6],
) -> (f64, RewardComponents) {
    let raw = reward_components(case, sol, gen_p, on, prev_on, ren_ceiling, cost_normalizer);
    let clipped = raw.clipped(penalty_clip);
    (clipped.weighted(weights), clipped)
}
