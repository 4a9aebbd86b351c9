//! Intraday economic dispatch under a fixed commitment.

use crate::env::GridEnv;
use crate::grid::{GenKind, GeneratorSpec};
use crate::safety::{can_shut, can_start, LegalAction};

use super::uc::CommitmentSchedule;

/// Quadratic-cost unit with an output window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchUnit {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub lo: f64,
    pub hi: f64,
}

impl DispatchUnit {
    pub fn from_spec(g: &GeneratorSpec) -> Self {
        DispatchUnit {
            c2: g.c2,
            c1: g.c1,
            c0: g.c0,
            lo: g.p_min,
            hi: g.p_max,
        }
    }

    pub fn cost(&self, p: f64) -> f64 {
        self.c2 * p * p + self.c1 * p + self.c0
    }

    pub fn marginal(&self, p: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * p
    }

    /// Output at incremental cost `lambda`.
    fn output(&self, lambda: f64) -> f64 {
        if self.c2 > 0.0 {
            ((lambda - self.c1) / (2.0 * self.c2)).clamp(self.lo, self.hi)
        } else if lambda > self.c1 {
            self.hi
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub p: Vec<f64>,
    pub lambda: f64,
    /// Demand lay outside the units' joint window; outputs were set
    /// proportionally and clipped.
    pub fallback: bool,
}

/// Equal-incremental-cost dispatch of `demand` by bisection on the system
/// incremental cost.
pub fn economic_dispatch(units: &[DispatchUnit], demand: f64) -> Dispatch {
    let lo: f64 = units.iter().map(|u| u.lo).sum();
    let hi: f64 = units.iter().map(|u| u.hi).sum();
    if units.is_empty() || demand < lo - 1e-9 || demand > hi + 1e-9 {
        return proportional(units, demand, lo, hi);
    }
    let mut a = units
        .iter()
        .map(|u| u.marginal(u.lo))
        .fold(f64::INFINITY, f64::min);
    let mut b = units
        .iter()
        .map(|u| u.marginal(u.hi))
        .fold(f64::NEG_INFINITY, f64::max);
    let total = |l: f64| units.iter().map(|u| u.output(l)).sum::<f64>();
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if total(mid) < demand {
            a = mid;
        } else {
            b = mid;
        }
    }
    let lambda = 0.5 * (a + b);
    let mut p: Vec<f64> = units.iter().map(|u| u.output(lambda)).collect();
    // Close the remaining mismatch on units with room.
    let gap = demand - p.iter().sum::<f64>();
    let room: Vec<f64> = units
        .iter()
        .zip(&p)
        .map(|(u, &x)| if gap > 0.0 { u.hi - x } else { x - u.lo })
        .collect();
    let sum: f64 = room.iter().sum();
    if sum > 0.0 {
        for ((x, r), u) in p.iter_mut().zip(&room).zip(units) {
            *x = (*x + gap * r / sum).clamp(u.lo, u.hi);
        }
    }
    Dispatch {
        p,
        lambda,
        fallback: false,
    }
}

fn proportional(units: &[DispatchUnit], demand: f64, lo: f64, hi: f64) -> Dispatch {
    let f = if hi > lo {
        ((demand - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let p: Vec<f64> = units.iter().map(|u| u.lo + f * (u.hi - u.lo)).collect();
    Dispatch {
        lambda: f64::NAN,
        p,
        fallback: true,
    }
}

/// Setpoints for the next step following `schedule`.
///
/// Renewables cover as much of the forecast demand as the thermal minimums
/// leave; committed thermal units and the balanced unit share the rest at
/// equal incremental cost inside their ramp windows. The balanced unit's
/// share is planned only; the network settles its actual output. Units due
/// to shut down are ramped to `p_min` ahead of time. Returns the action and
/// whether the dispatch fell back to proportional sharing.
pub fn das_ed(
    env: &GridEnv,
    schedule: &CommitmentSchedule,
    redundancy: f64,
) -> (LegalAction, bool) {
    let case = env.case();
    let state = env.state();
    let t = state.step;
    let bounds = env.action_space();
    let forecast = env.forecast();
    let mut action = LegalAction::noop(case.n_gen());

    let planned = |g: usize, t: usize| {
        schedule
            .is_on(g, t)
            .or_else(|| schedule.is_on(g, schedule.len().saturating_sub(1)))
            .unwrap_or(true)
    };
    for g in case.thermal_ids() {
        let want = planned(g, t);
        if want && action.startup.is_none() && can_start(case, state, g) {
            action.startup = Some(g);
            action.delta_p[g] = case.generators[g].p_min;
        } else if !want && action.shutdown.is_none() && can_shut(case, state, g) {
            action.shutdown = Some(g);
            action.delta_p[g] = -state.gen_p[g];
        }
    }

    let mut fixed = 0.0;
    let mut units = Vec::new();
    let mut ids = Vec::new();
    let bal = case.balanced();
    units.push(DispatchUnit {
        lo: bal.p_min + redundancy,
        hi: bal.p_max - redundancy,
        ..DispatchUnit::from_spec(bal)
    });
    ids.push(case.balanced_id());
    for g in case.thermal_ids() {
        let spec = &case.generators[g];
        if action.switching(g) {
            fixed += state.gen_p[g] + action.delta_p[g];
            continue;
        }
        if !state.gen_status[g] {
            continue;
        }
        let p = state.gen_p[g];
        let (lo, mut hi) = (p + bounds[g].0, p + bounds[g].1);
        if let Some(k) = (t..schedule.len()).find(|&k| !planned(g, k)) {
            let cap = spec.p_min + spec.ramp_mw() * (k - t).saturating_sub(1) as f64;
            hi = hi.min(cap).max(lo);
        }
        units.push(DispatchUnit {
            lo,
            hi,
            ..DispatchUnit::from_spec(spec)
        });
        ids.push(g);
    }

    let demand = forecast.next_load_p.iter().sum::<f64>() + env.solution().grid_loss;
    let ren = case.renewable_ids();
    let ceiling: Vec<f64> = ren
        .iter()
        .zip(&forecast.next_renewable_p_max)
        .map(|(&g, &c)| c.min(state.gen_p[g] + bounds[g].1).max(0.0))
        .collect();
    let floor: f64 = units.iter().map(|u| u.lo).sum();
    let ceil_total: f64 = ceiling.iter().sum();
    let want_ren = (demand - fixed - floor).clamp(0.0, ceil_total);
    for (&g, &c) in ren.iter().zip(&ceiling) {
        let target = if ceil_total > 0.0 {
            c * want_ren / ceil_total
        } else {
            0.0
        };
        action.delta_p[g] = target - state.gen_p[g];
    }

    let d = economic_dispatch(&units, demand - fixed - want_ren);
    for (&g, &p) in ids.iter().zip(&d.p) {
        if case.generators[g].kind == GenKind::Thermal {
            action.delta_p[g] = p - state.gen_p[g];
        }
    }
    for (i, g) in case.generators.iter().enumerate() {
        if g.kind != GenKind::Balanced && !action.switching(i) {
            let (lo, hi) = bounds[i];
            action.delta_p[i] = action.delta_p[i].clamp(lo, hi);
        }
    }
    (action, d.fallback)
}
