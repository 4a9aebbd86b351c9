//! Action mapping and the power-balancing safety layer.

use serde::{Deserialize, Serialize};

use crate::env::{EnvState, Forecast, LEGALITY_EPS};
use crate::grid::{GenKind, GridCase};

/// Policy-space action over the controllable units (every unit except the
/// balanced one, case order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    /// Continuous part in `[-1, 1]^n`.
    pub a_p: Vec<f64>,
    /// Startup one-hot of length `n + 1`; the last slot is "no startup".
    pub a_o: Vec<f64>,
    /// Shutdown one-hot of length `n + 1`; the last slot is "no shutdown".
    pub a_c: Vec<f64>,
}

impl RawAction {
    pub fn new(a_p: Vec<f64>, startup_slot: usize, shutdown_slot: usize) -> Self {
        let n = a_p.len();
        RawAction {
            a_o: one_hot(n + 1, startup_slot),
            a_c: one_hot(n + 1, shutdown_slot),
            a_p,
        }
    }

    /// No adjustment, no switching.
    pub fn noop(n: usize) -> Self {
        Self::new(vec![0.0; n], n, n)
    }

    pub fn n(&self) -> usize {
        self.a_p.len()
    }

    pub fn startup_slot(&self) -> usize {
        argmax(&self.a_o)
    }

    pub fn shutdown_slot(&self) -> usize {
        argmax(&self.a_c)
    }

    /// Flat `[a_p | a_o | a_c]` vector of length `3n + 2`.
    pub fn encode(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.n() + 2);
        v.extend(&self.a_p);
        v.extend(&self.a_o);
        v.extend(&self.a_c);
        v
    }
}

pub fn one_hot(len: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[idx] = 1.0;
    v
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |b, (i, &x)| if x > b.1 { (i, x) } else { b },
        )
        .0
}

/// Physical adjustment in MW for every generator (balanced entry unused).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegalAction {
    pub delta_p: Vec<f64>,
    pub startup: Option<usize>,
    pub shutdown: Option<usize>,
}

impl LegalAction {
    pub fn noop(n_gen: usize) -> Self {
        LegalAction {
            delta_p: vec![0.0; n_gen],
            startup: None,
            shutdown: None,
        }
    }

    pub fn switching(&self, i: usize) -> bool {
        self.startup == Some(i) || self.shutdown == Some(i)
    }

    pub fn total(&self, case: &GridCase) -> f64 {
        let bal = case.balanced_id();
        self.delta_p
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != bal)
            .map(|(_, d)| d)
            .sum()
    }
}

pub fn can_start(case: &GridCase, state: &EnvState, i: usize) -> bool {
    case.generators[i].kind == GenKind::Thermal
        && !state.gen_status[i]
        && state.steps_to_recover[i] == 0
}

pub fn can_shut(case: &GridCase, state: &EnvState, i: usize) -> bool {
    let g = &case.generators[i];
    g.kind == GenKind::Thermal
        && state.gen_status[i]
        && state.steps_to_close[i] == 0
        && (state.gen_p[i] - g.p_min).abs() <= LEGALITY_EPS
}

/// Map a policy-space action onto the adjustment bounds.
///
/// Startups force the unit to `p_min`, shutdowns force it to zero. Ineligible
/// switch requests, and a startup and shutdown of the same unit, are dropped.
pub fn map_action(
    case: &GridCase,
    state: &EnvState,
    raw: &RawAction,
    bounds: &[(f64, f64)],
) -> LegalAction {
    let ids = case.controllable_ids();
    assert_eq!(raw.n(), ids.len(), "raw action width");
    let mut out = LegalAction::noop(case.n_gen());
    for (k, &i) in ids.iter().enumerate() {
        let a = raw.a_p[k].clamp(-1.0, 1.0);
        let (lo, hi) = bounds[i];
        out.delta_p[i] = (a + 1.0) / 2.0 * (hi - lo) + lo;
    }
    let pick = |slot: usize| (slot < ids.len()).then(|| ids[slot]);
    let mut startup = pick(raw.startup_slot()).filter(|&i| can_start(case, state, i));
    let mut shutdown = pick(raw.shutdown_slot()).filter(|&i| can_shut(case, state, i));
    if startup.is_some() && startup == shutdown {
        (startup, shutdown) = (None, None);
    }
    if let Some(j) = startup {
        out.delta_p[j] = case.generators[j].p_min;
    }
    if let Some(k) = shutdown {
        out.delta_p[k] = -state.gen_p[k];
    }
    out.startup = startup;
    out.shutdown = shutdown;
    out
}

/// Inverse of [`map_action`] on the continuous part; switches become slots.
pub fn unmap_action(case: &GridCase, action: &LegalAction, bounds: &[(f64, f64)]) -> RawAction {
    let ids = case.controllable_ids();
    let n = ids.len();
    let a_p = ids
        .iter()
        .map(|&i| {
            let (lo, hi) = bounds[i];
            if action.switching(i) || hi - lo <= 0.0 {
                0.0
            } else {
                (2.0 * (action.delta_p[i] - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
            }
        })
        .collect();
    let slot = |id: Option<usize>| {
        id.and_then(|g| ids.iter().position(|&i| i == g))
            .unwrap_or(n)
    };
    RawAction::new(a_p, slot(action.startup), slot(action.shutdown))
}

/// Readjustment needed to keep the balanced unit inside its safe range.
pub fn balance_pull(p_bal: f64, lower: f64, upper: f64, delta: f64) -> f64 {
    if p_bal > upper - delta {
        -(upper - delta - p_bal)
    } else if p_bal < lower + delta {
        p_bal - lower - delta
    } else {
        0.0
    }
}

/// Activation threshold of the safety layer for redundancy `delta`.
pub fn threshold(delta: f64) -> f64 {
    delta / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Legalized {
    pub action: LegalAction,
    /// Readjustment objective before allocation (MW).
    pub objective: f64,
    /// Part of the objective that could not be allocated (MW).
    pub residual: f64,
    /// Headroom was short of the objective by more than `delta`.
    pub infeasible: bool,
}

/// Rebalance `action` so the forecast load change is covered and the
/// balanced unit is pulled back inside `[p_min + delta, p_max - delta]`.
///
/// The objective is spread over online, non-switching, non-balanced units in
/// proportion to their remaining headroom inside `bounds`. Allocations are
/// clipped and the clipped remainder is spread once more over the units that
/// still have room.
pub fn legalize(
    case: &GridCase,
    state: &EnvState,
    action: &LegalAction,
    forecast: &Forecast,
    bounds: &[(f64, f64)],
    delta: f64,
) -> Legalized {
    let bal = case.balanced();
    let load_change = forecast.next_load_p.iter().sum::<f64>() - state.load_p.iter().sum::<f64>();
    let pull = balance_pull(state.gen_p[case.balanced_id()], bal.p_min, bal.p_max, delta);
    let objective = load_change - action.total(case) + pull;
    let mut out = action.clone();
    if objective.abs() <= threshold(delta) {
        return Legalized {
            action: out,
            objective,
            residual: objective,
            infeasible: false,
        };
    }
    let adjustable: Vec<usize> = case
        .controllable_ids()
        .into_iter()
        .filter(|&i| state.gen_status[i] && !action.switching(i))
        .collect();
    let room = |out: &LegalAction, i: usize| {
        let (lo, hi) = bounds[i];
        if objective > 0.0 {
            (hi - out.delta_p[i]).max(0.0)
        } else {
            (out.delta_p[i] - lo).max(0.0)
        }
    };
    let total_room: f64 = adjustable.iter().map(|&i| room(&out, i)).sum();
    let infeasible = total_room < objective.abs() - delta;

    let mut remaining = objective;
    let mut open = adjustable;
    for _pass in 0..2 {
        let rooms: Vec<f64> = open.iter().map(|&i| room(&out, i)).collect();
        let sum: f64 = rooms.iter().sum();
        if sum <= 0.0 || remaining == 0.0 {
            break;
        }
        let target = remaining;
        let mut still_open = Vec::new();
        for (&i, &r) in open.iter().zip(&rooms) {
            let (lo, hi) = bounds[i];
            let want = out.delta_p[i] + target * r / sum;
            let got = want.clamp(lo, hi);
            remaining -= got - out.delta_p[i];
            out.delta_p[i] = got;
            if got == want {
                still_open.push(i);
            }
        }
        open = still_open;
    }
    Legalized {
        action: out,
        objective,
        residual: remaining,
        infeasible,
    }
}

#[cfg(test)]
mod tests;
