//! Day-ahead unit commitment: priority list, run repair and an exact
//! reference for small fleets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ed::{economic_dispatch, DispatchUnit};
use crate::env::TimeSeries;
use crate::error::{Error, Result};
use crate::grid::GridCase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UcConfig {
    /// Spinning reserve as a fraction of forecast net load.
    pub reserve: f64,
    /// Shortest admissible on- or off-run in steps.
    pub min_run: usize,
}

impl Default for UcConfig {
    fn default() -> Self {
        UcConfig {
            reserve: 0.05,
            min_run: 41,
        }
    }
}

/// Day-ahead forecast error model. Each load and renewable unit gets one
/// multiplicative bias for the whole day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastNoise {
    pub load_std: f64,
    pub renewable_std: f64,
    /// Systematic multiplier on renewable forecasts.
    pub renewable_scale: f64,
}

impl Default for ForecastNoise {
    fn default() -> Self {
        ForecastNoise {
            load_std: 0.02,
            renewable_std: 0.2,
            renewable_scale: 1.0,
        }
    }
}

impl ForecastNoise {
    pub fn perfect() -> Self {
        ForecastNoise {
            load_std: 0.0,
            renewable_std: 0.0,
            renewable_scale: 1.0,
        }
    }
}

/// System totals for the steps of one episode. Entry `t` describes the
/// state reached by action `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DayForecast {
    pub load: Vec<f64>,
    pub renewable: Vec<f64>,
}

impl DayForecast {
    pub fn new(
        series: &TimeSeries,
        start: usize,
        len: usize,
        noise: &ForecastNoise,
        seed: u64,
    ) -> Result<Self> {
        if series.is_empty() || start >= series.len() {
            return Err(Error::SeriesTooShort {
                start,
                end: start + len,
                len: series.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bias = |std: f64, n: usize| -> Vec<f64> {
            let d = Normal::new(0.0, std.max(0.0)).expect("finite std");
            (0..n)
                .map(|_| {
                    if std > 0.0 {
                        (1.0 + d.sample(&mut rng)).max(0.0)
                    } else {
                        1.0
                    }
                })
                .collect()
        };
        let lb = bias(noise.load_std, series.load_p.len());
        let rb = bias(noise.renewable_std, series.renewable_p_max.len());
        let col = |t: usize| (start + t + 1).min(series.len() - 1);
        let load = (0..len)
            .map(|t| {
                series
                    .load_p
                    .iter()
                    .zip(&lb)
                    .map(|(l, b)| l[col(t)] * b)
                    .sum()
            })
            .collect();
        let renewable = (0..len)
            .map(|t| {
                noise.renewable_scale
                    * series
                        .renewable_p_max
                        .iter()
                        .zip(&rb)
                        .map(|(r, b)| r[col(t)] * b)
                        .sum::<f64>()
            })
            .collect();
        Ok(DayForecast { load, renewable })
    }

    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    pub fn net_load(&self, t: usize) -> f64 {
        (self.load[t] - self.renewable[t]).max(0.0)
    }
}

/// On/off plan for the thermal units over one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitmentSchedule {
    /// Generator ids, one row of `on` each.
    pub units: Vec<usize>,
    pub on: Vec<Vec<bool>>,
    /// Some step could not reach its reserve requirement.
    pub infeasible: bool,
    /// Largest uncovered requirement in MW.
    pub shortfall: f64,
}

impl CommitmentSchedule {
    pub fn len(&self) -> usize {
        self.on.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scheduled status of generator `gen` after action `t`.
    pub fn is_on(&self, gen: usize, t: usize) -> Option<bool> {
        let row = self.units.iter().position(|&u| u == gen)?;
        self.on[row].get(t).copied()
    }

    /// Committed output range at step `t`, balanced unit included.
    pub fn capacity(&self, case: &GridCase, t: usize) -> (f64, f64) {
        let b = case.balanced();
        self.units
            .iter()
            .zip(&self.on)
            .filter(|(_, row)| row[t])
            .fold((b.p_min, b.p_max), |(lo, hi), (&u, _)| {
                let g = &case.generators[u];
                (lo + g.p_min, hi + g.p_max)
            })
    }

    /// Every run that begins and ends inside the horizon lasts `min_run`.
    pub fn respects_min_run(&self, min_run: usize) -> bool {
        self.on.iter().all(|row| short_run(row, min_run).is_none())
    }
}

/// First run that starts after a switch inside the horizon, ends before the
/// horizon and is shorter than `min_run`. Units are on before step 0.
fn short_run(row: &[bool], min_run: usize) -> Option<(usize, usize)> {
    let mut a = 0;
    while a < row.len() {
        let mut b = a;
        while b < row.len() && row[b] == row[a] {
            b += 1;
        }
        let switched_in = a > 0 || !row[a];
        if switched_in && b < row.len() && b - a < min_run {
            return Some((a, b));
        }
        a = b;
    }
    None
}

/// Fill short off-gaps and extend short on-runs until every run is long
/// enough. Only ever turns units on.
pub fn repair_runs(row: &mut [bool], min_run: usize) {
    while let Some((a, b)) = short_run(row, min_run) {
        if row[a] {
            let end = (a + min_run).min(row.len());
            row[a..end].iter_mut().for_each(|s| *s = true);
        } else {
            row[a..b].iter_mut().for_each(|s| *s = true);
        }
    }
}

/// Steps each unit of `units` needs to ramp from `initial_p` down to
/// `p_min`, before which it cannot be shut down.
pub fn shutdown_lead(case: &GridCase, units: &[usize], initial_p: &[f64]) -> Vec<usize> {
    units
        .iter()
        .map(|&u| {
            let g = &case.generators[u];
            let excess = (initial_p[u] - g.p_min).max(0.0);
            if excess <= 0.0 {
                0
            } else {
                (excess / g.ramp_mw()).ceil() as usize
            }
        })
        .collect()
}

/// Thermal ids by marginal cost at full output, cheapest first.
pub fn priority_order(case: &GridCase) -> Vec<usize> {
    let mut ids = case.thermal_ids();
    ids.sort_by(|&a, &b| {
        let (ga, gb) = (&case.generators[a], &case.generators[b]);
        ga.marginal_cost(ga.p_max)
            .total_cmp(&gb.marginal_cost(gb.p_max))
            .then(a.cmp(&b))
    });
    ids
}

/// Priority-list commitment.
///
/// Per step, units are committed cheapest first until the committed maximum
/// covers net load plus reserve, skipping units whose minimum output would
/// push the committed minimum above net load. Skipped units are taken after
/// all if the reserve is still short. Units stay on until they can have
/// ramped down from `initial_p`, then runs are repaired.
pub fn das_uc(
    case: &GridCase,
    forecast: &DayForecast,
    initial_p: &[f64],
    cfg: &UcConfig,
) -> CommitmentSchedule {
    let order = priority_order(case);
    let lead = shutdown_lead(case, &order, initial_p);
    let b = case.balanced();
    let len = forecast.len();
    let mut on = vec![vec![false; len]; order.len()];
    let mut shortfall: f64 = 0.0;
    for t in 0..len {
        let net = forecast.net_load(t);
        let need = net * (1.0 + cfg.reserve);
        let (mut lo, mut hi) = (b.p_min, b.p_max);
        let mut skipped = Vec::new();
        for (k, &u) in order.iter().enumerate() {
            if hi >= need {
                break;
            }
            let g = &case.generators[u];
            if lo + g.p_min > net {
                skipped.push(k);
                continue;
            }
            on[k][t] = true;
            lo += g.p_min;
            hi += g.p_max;
        }
        for k in skipped {
            if hi >= need {
                break;
            }
            on[k][t] = true;
            hi += case.generators[order[k]].p_max;
        }
        shortfall = shortfall.max(need - hi);
    }
    for (row, &l) in on.iter_mut().zip(&lead) {
        let l = l.min(row.len());
        row[..l].iter_mut().for_each(|s| *s = true);
        repair_runs(row, cfg.min_run);
    }
    CommitmentSchedule {
        units: order,
        on,
        infeasible: shortfall > 0.0,
        shortfall: shortfall.max(0.0),
    }
}

/// Least running cost of covering `demand` with the units in `mask` (bit
/// `k` selects `units[k]`) plus the balanced unit. Demand is clipped to the
/// committed range.
fn step_cost(case: &GridCase, units: &[usize], mask: usize, demand: f64) -> f64 {
    let mut ds = vec![DispatchUnit::from_spec(case.balanced())];
    ds.extend(
        units
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &u)| DispatchUnit::from_spec(&case.generators[u])),
    );
    let lo: f64 = ds.iter().map(|d| d.lo).sum();
    let hi: f64 = ds.iter().map(|d| d.hi).sum();
    let d = economic_dispatch(&ds, demand.clamp(lo, hi));
    ds.iter().zip(&d.p).map(|(u, &p)| u.cost(p)).sum()
}

fn reserve_ok(case: &GridCase, units: &[usize], mask: usize, need: f64) -> bool {
    let hi = case.balanced().p_max
        + units
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &u)| case.generators[u].p_max)
            .sum::<f64>();
    hi >= need
}

/// Production plus switching cost of `schedule` against `forecast`, with
/// every unit on before step 0.
pub fn schedule_cost(
    case: &GridCase,
    forecast: &DayForecast,
    schedule: &CommitmentSchedule,
) -> f64 {
    let mut prev = vec![true; schedule.units.len()];
    let mut total = 0.0;
    for t in 0..schedule.len() {
        let mut mask = 0;
        for (k, row) in schedule.on.iter().enumerate() {
            if row[t] {
                mask |= 1 << k;
            }
            if row[t] != prev[k] {
                total += case.generators[schedule.units[k]].c_onoff;
            }
            prev[k] = row[t];
        }
        total += step_cost(case, &schedule.units, mask, forecast.net_load(t));
    }
    total
}

/// Largest fleet the exact search accepts.
pub const EXACT_MAX_UNITS: usize = 3;

/// Least [`schedule_cost`] over all schedules that meet the reserve at every
/// step, respect the run rule and keep units on through their shutdown lead.
/// Steps where even the full fleet is short require the full fleet.
///
/// Dynamic programming over per-unit status and run-length counters capped
/// at `min_run`.
pub fn exact_uc_cost(
    case: &GridCase,
    forecast: &DayForecast,
    initial_p: &[f64],
    cfg: &UcConfig,
) -> Result<f64> {
    let units = priority_order(case);
    let lead = shutdown_lead(case, &units, initial_p);
    let k = units.len();
    if k > EXACT_MAX_UNITS {
        return Err(Error::Config(format!(
            "exact commitment supports at most {EXACT_MAX_UNITS} thermal units, case has {k}"
        )));
    }
    let m = cfg.min_run.max(1);
    let base = 2 * m;
    let n_states = base.pow(k as u32);
    let n_masks = 1usize << k;
    let full = n_masks - 1;

    // digit = status * m + (counter - 1)
    let digit = |s: usize, j: usize| s / base.pow(j as u32) % base;
    let status_mask: Vec<usize> = (0..n_states)
        .map(|s| {
            (0..k)
                .filter(|&j| digit(s, j) >= m)
                .fold(0, |a, j| a | 1 << j)
        })
        .collect();
    let trans: Vec<u32> = (0..n_states)
        .flat_map(|s| {
            (0..n_masks).map(move |sw| {
                let mut next = 0;
                for j in (0..k).rev() {
                    let d = digit(s, j);
                    let (on, c) = (d / m, d % m + 1);
                    let nd = if sw >> j & 1 == 1 {
                        if c < m {
                            return u32::MAX;
                        }
                        (1 - on) * m
                    } else {
                        on * m + c.min(m - 1)
                    };
                    next = next * base + nd;
                }
                next as u32
            })
        })
        .collect();
    let switch_cost: Vec<f64> = (0..n_masks)
        .map(|sw| {
            (0..k)
                .filter(|&j| sw >> j & 1 == 1)
                .map(|j| case.generators[units[j]].c_onoff)
                .sum()
        })
        .collect();

    let initial = (0..k).fold(0, |a, _| a * base + (m + m - 1));
    let mut v = vec![f64::INFINITY; n_states];
    v[initial] = 0.0;
    let mut w = vec![f64::INFINITY; n_states];
    for t in 0..forecast.len() {
        let net = forecast.net_load(t);
        let need = net * (1.0 + cfg.reserve);
        let any_ok = (0..n_masks).any(|mk| reserve_ok(case, &units, mk, need));
        let cost: Vec<f64> = (0..n_masks)
            .map(|mk| {
                let forced = (0..k).all(|j| t >= lead[j] || mk >> j & 1 == 1);
                let ok = forced
                    && if any_ok {
                        reserve_ok(case, &units, mk, need)
                    } else {
                        mk == full
                    };
                if ok {
                    step_cost(case, &units, mk, net)
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        w.iter_mut().for_each(|x| *x = f64::INFINITY);
        for (s, &vs) in v.iter().enumerate() {
            if !vs.is_finite() {
                continue;
            }
            for (sw, &next) in trans[s * n_masks..(s + 1) * n_masks].iter().enumerate() {
                if next == u32::MAX {
                    continue;
                }
                let next = next as usize;
                let c = vs + switch_cost[sw] + cost[status_mask[next]];
                if c < w[next] {
                    w[next] = c;
                }
            }
        }
        std::mem::swap(&mut v, &mut w);
    }
    Ok(v.iter().copied().fold(f64::INFINITY, f64::min))
}
