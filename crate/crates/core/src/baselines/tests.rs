use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::cases;
use crate::env::{
    make_profiles, EnvConfig, EpisodeTrace, GridEnv, RewardComponents, StepInfo, TerminationReason,
    TimeSeries, Violations,
};
use crate::grid::{GenKind, GridCase};
use crate::safety::LegalAction;

fn unit(c2: f64, c1: f64, lo: f64, hi: f64) -> DispatchUnit {
    DispatchUnit {
        c2,
        c1,
        c0: 0.0,
        lo,
        hi,
    }
}

fn flat(len: usize, load: f64, renewable: f64) -> DayForecast {
    DayForecast {
        load: vec![load; len],
        renewable: vec![renewable; len],
    }
}

fn at_min(case: &GridCase) -> Vec<f64> {
    case.generators.iter().map(|g| g.p_min).collect()
}

#[test]
fn equal_incremental_split() {
    let d = economic_dispatch(
        &[unit(0.01, 1.0, 0.0, 200.0), unit(0.01, 2.0, 0.0, 200.0)],
        100.0,
    );
    assert!(!d.fallback);
    assert!((d.p[0] - d.p[1] - 50.0).abs() < 1e-9, "{:?}", d.p);
    // 1 + 0.02 p1 = 2 + 0.02 p2, p1 + p2 = 100
    assert!((d.lambda - 2.5).abs() < 1e-9);
}

#[test]
fn demand_below_minimums_saturates() {
    let units = [unit(0.01, 1.0, 30.0, 90.0), unit(0.02, 3.0, 20.0, 60.0)];
    let d = economic_dispatch(&units, 40.0);
    assert!(d.fallback);
    assert_eq!(d.p, vec![30.0, 20.0]);
    let d = economic_dispatch(&units, 500.0);
    assert!(d.fallback);
    assert_eq!(d.p, vec![90.0, 60.0]);
}

#[test]
fn single_unit_takes_everything_within_ramp() {
    let ramp = [unit(0.002, 20.0, 98.0, 122.0)];
    assert!((economic_dispatch(&ramp, 110.0).p[0] - 110.0).abs() < 1e-9);
    let d = economic_dispatch(&ramp, 140.0);
    assert!(d.fallback);
    assert_eq!(d.p[0], 122.0);
}

proptest! {
    #[test]
    fn dispatch_is_equal_cost_on_the_interior(
        spec in prop::collection::vec((0.001f64..0.05, 5.0f64..40.0, 0.0f64..50.0, 20.0f64..150.0), 2..6),
        frac in 0.0f64..1.0,
    ) {
        let units: Vec<DispatchUnit> = spec
            .iter()
            .map(|&(c2, c1, lo, w)| unit(c2, c1, lo, lo + w))
            .collect();
        let lo: f64 = units.iter().map(|u| u.lo).sum();
        let hi: f64 = units.iter().map(|u| u.hi).sum();
        let demand = lo + frac * (hi - lo);
        let d = economic_dispatch(&units, demand);
        prop_assert!(!d.fallback);
        prop_assert!((d.p.iter().sum::<f64>() - demand).abs() < 1e-7);
        for (u, &p) in units.iter().zip(&d.p) {
            prop_assert!(p >= u.lo - 1e-12 && p <= u.hi + 1e-12);
            let mc = u.marginal(p);
            if p > u.lo + 1e-6 && p < u.hi - 1e-6 {
                prop_assert!((mc - d.lambda).abs() < 1e-6, "mc {} lambda {}", mc, d.lambda);
            } else if p <= u.lo + 1e-6 {
                prop_assert!(mc >= d.lambda - 1e-6);
            } else {
                prop_assert!(mc <= d.lambda + 1e-6);
            }
        }
    }

    #[test]
    fn repair_only_adds_and_enforces_runs(
        row in prop::collection::vec(any::<bool>(), 1..200),
        min_run in 1usize..50,
    ) {
        let mut fixed = row.clone();
        repair_runs(&mut fixed, min_run);
        for (a, b) in row.iter().zip(&fixed) {
            prop_assert!(!a || *b);
        }
        let s = CommitmentSchedule { units: vec![0], on: vec![fixed], infeasible: false, shortfall: 0.0 };
        prop_assert!(s.respects_min_run(min_run));
    }
}

#[test]
fn short_off_gap_is_filled() {
    let mut row: Vec<bool> = (0..200).map(|t| !(60..90).contains(&t)).collect();
    repair_runs(&mut row, 40);
    assert!(row.iter().all(|&s| s));
    let mut row: Vec<bool> = (0..200).map(|t| !(60..110).contains(&t)).collect();
    let before = row.clone();
    repair_runs(&mut row, 40);
    assert_eq!(row, before);
}

#[test]
fn cheapest_unit_alone_covers_flat_demand() {
    let case = cases::nine_bus();
    let order = priority_order(&case);
    let cheapest = order[0];
    let g = &case.generators[cheapest];
    let b = case.balanced();
    let net = 0.5 * (b.p_max + g.p_max + b.p_min + g.p_min);
    let s = das_uc(
        &case,
        &flat(288, net, 0.0),
        &at_min(&case),
        &UcConfig::default(),
    );
    assert!(!s.infeasible);
    assert!(s.on[0].iter().all(|&x| x));
    assert!(s.on[1..].iter().all(|row| row.iter().all(|&x| !x)));
    assert_eq!(s.units[0], cheapest);
    assert_eq!(s.capacity(&case, 0), (b.p_min + g.p_min, b.p_max + g.p_max));
}

#[test]
fn shortfall_is_flagged() {
    let case = cases::nine_bus();
    let s = das_uc(
        &case,
        &flat(50, 5000.0, 0.0),
        &at_min(&case),
        &UcConfig::default(),
    );
    assert!(s.infeasible);
    let total: f64 = case
        .generators
        .iter()
        .filter(|g| g.kind != GenKind::Renewable)
        .map(|g| g.p_max)
        .sum();
    assert!((s.shortfall - (5000.0 * 1.05 - total)).abs() < 1e-9);
}

#[test]
fn overestimated_renewables_commit_less() {
    let case = Arc::new(cases::nine_bus());
    let series = make_profiles(&case, 3, 2);
    let p0 = at_min(&case);
    let cfg = UcConfig::default();
    let committed = |scale: f64| {
        let noise = ForecastNoise {
            renewable_scale: scale,
            ..ForecastNoise::perfect()
        };
        let f = DayForecast::new(&series, 0, 288, &noise, 0).unwrap();
        let s = das_uc(&case, &f, &p0, &cfg);
        s.on.iter().flatten().filter(|&&x| x).count()
    };
    assert!(committed(2.0) < committed(1.0));
}

#[test]
fn run_lead_keeps_initial_units_on() {
    let case = cases::six_bus();
    let t = case.thermal_ids()[0];
    let mut p0 = at_min(&case);
    p0[t] = case.generators[t].p_min + 3.5 * case.generators[t].ramp_mw();
    assert_eq!(shutdown_lead(&case, &[t], &p0), vec![4]);
    let s = das_uc(&case, &flat(100, 0.0, 0.0), &p0, &UcConfig::default());
    assert_eq!(&s.on[0][..5], &[true, true, true, true, false]);
}

/// Least cost over every admissible schedule by enumeration.
fn brute_force(case: &GridCase, f: &DayForecast, p0: &[f64], cfg: &UcConfig) -> f64 {
    let units = priority_order(case);
    let lead = shutdown_lead(case, &units, p0);
    let (k, len) = (units.len(), f.len());
    let bits = k * len;
    let cap = |mask: &[bool]| {
        case.balanced().p_max
            + units
                .iter()
                .zip(mask)
                .filter(|(_, on)| **on)
                .map(|(&u, _)| case.generators[u].p_max)
                .sum::<f64>()
    };
    let mut best = f64::INFINITY;
    for code in 0u64..(1 << bits) {
        let on: Vec<Vec<bool>> = (0..k)
            .map(|j| (0..len).map(|t| code >> (j * len + t) & 1 == 1).collect())
            .collect();
        let s = CommitmentSchedule {
            units: units.clone(),
            on,
            infeasible: false,
            shortfall: 0.0,
        };
        if !s.respects_min_run(cfg.min_run) {
            continue;
        }
        let ok = (0..len).all(|t| {
            let mask: Vec<bool> = s.on.iter().map(|r| r[t]).collect();
            let need = f.net_load(t) * (1.0 + cfg.reserve);
            let all_short = cap(&vec![true; k]) < need;
            let led = (0..k).all(|j| t >= lead[j] || mask[j]);
            led && if all_short {
                mask.iter().all(|&x| x)
            } else {
                cap(&mask) >= need
            }
        });
        if ok {
            best = best.min(schedule_cost(case, f, &s));
        }
    }
    best
}

#[test]
fn exact_commitment_matches_enumeration() {
    let case = cases::nine_bus();
    let cfg = UcConfig {
        min_run: 2,
        ..UcConfig::default()
    };
    let mut p0 = at_min(&case);
    let t1 = case.thermal_ids()[0];
    p0[t1] += case.generators[t1].ramp_mw() * 1.5;
    for load in [
        [180.0, 420.0, 300.0, 150.0, 500.0],
        [600.0, 200.0, 210.0, 620.0, 250.0],
    ] {
        let f = DayForecast {
            load: load.to_vec(),
            renewable: vec![20.0; 5],
        };
        let dp = exact_uc_cost(&case, &f, &p0, &cfg).unwrap();
        let bf = brute_force(&case, &f, &p0, &cfg);
        assert!((dp - bf).abs() <= 1e-9 * bf, "dp {dp} enumeration {bf}");
        let heur = schedule_cost(&case, &f, &das_uc(&case, &f, &p0, &cfg));
        assert!(dp <= heur + 1e-9);
    }
}

#[test]
fn exact_commitment_rejects_large_fleets() {
    let mut case = cases::nine_bus();
    let extra = case.generators[case.thermal_ids()[0]].clone();
    case.generators.push(extra);
    let f = flat(3, 100.0, 0.0);
    assert!(exact_uc_cost(&case, &f, &at_min(&case), &UcConfig::default()).is_err());
}

#[test]
fn priority_list_is_near_optimal_on_six_bus() {
    let case = cases::six_bus();
    let series = make_profiles(&case, 11, 2);
    let p0: Vec<f64> = case
        .generators
        .iter()
        .map(|g| 0.5 * (g.p_min + g.p_max))
        .collect();
    let f = DayForecast::new(&series, 0, 288, &ForecastNoise::perfect(), 0).unwrap();
    let cfg = UcConfig::default();
    let s = das_uc(&case, &f, &p0, &cfg);
    assert!(s.respects_min_run(cfg.min_run));
    let h = schedule_cost(&case, &f, &s);
    let x = exact_uc_cost(&case, &f, &p0, &cfg).unwrap();
    assert!(x <= h + 1e-6 && h <= 1.05 * x, "heuristic {h} exact {x}");
}

fn six_bus_setup() -> (Arc<GridCase>, Arc<TimeSeries>, EnvConfig) {
    let case = Arc::new(cases::six_bus());
    let series = Arc::new(make_profiles(&case, 7, 3));
    (case, series, EnvConfig::default())
}

#[test]
fn das_follows_schedule_without_breaches() {
    let (case, series, env) = six_bus_setup();
    let cfg = DasConfig {
        noise: ForecastNoise::perfect(),
        ..DasConfig::default()
    };
    let seeds = [0, 1, 2];
    let (report, runs) = evaluate("das", &case, &series, &env, &seeds, |e, s| {
        DasAgent::plan(e, &cfg, s)
    })
    .unwrap();
    for (m, run) in report.episodes.iter().zip(&runs) {
        assert_eq!(m.steps, env.episode_len, "seed {}", m.seed);
        assert_eq!(m.load_shedding + m.illegal + m.divergence, 0);
        assert_eq!(
            run.trace.steps.last().unwrap().termination,
            Some(TerminationReason::EpisodeEnd)
        );
    }
}

#[test]
fn das_minimum_load_curtails_renewables() {
    let (case, series, env) = six_bus_setup();
    let mut low = (*series).clone();
    for l in low.load_p.iter_mut().chain(low.load_q.iter_mut()) {
        l.iter_mut().for_each(|v| *v *= 0.3);
    }
    for r in &mut low.renewable_p_max {
        r.iter_mut().for_each(|v| *v = 100.0);
    }
    let e = GridEnv::reset(case.clone(), Arc::new(low), env, 0, 0).unwrap();
    let schedule = CommitmentSchedule {
        units: case.thermal_ids(),
        on: vec![vec![true; 288]],
        infeasible: false,
        shortfall: 0.0,
    };
    let (a, _) = das_ed(&e, &schedule, 5.0);
    let bounds = e.action_space();
    let t = case.thermal_ids()[0];
    assert!((a.delta_p[t] - bounds[t].0).abs() < 1e-9);
    for &r in &case.renewable_ids() {
        assert!(e.state().gen_p[r] + a.delta_p[r] < 100.0);
    }
}

#[test]
fn random_safe_agent_is_reproducible_and_legal() {
    let (case, series, env) = six_bus_setup();
    let seeds: Vec<u64> = (0..10).collect();
    let make = |_: &GridEnv, s: u64| Ok(RandomSafeAgent::new(s));
    let (a, runs) = evaluate("random", &case, &series, &env, &seeds, make).unwrap();
    let (b, _) = evaluate("random", &case, &series, &env, &seeds, make).unwrap();
    for (x, y) in a.episodes.iter().zip(&b.episodes) {
        assert_eq!(x.cumulative_reward, y.cumulative_reward);
    }
    assert!(a.episodes.iter().all(|m| m.illegal == 0));
    assert!(runs.iter().all(|r| r.trace.steps.len() <= env.episode_len));
    assert!(a.aggregate.mean_of("cumulative_reward").is_finite());
}

#[test]
fn pinned_renewables_consume_everything() {
    struct Pin;
    impl Agent for Pin {
        fn act(&mut self, env: &GridEnv) -> crate::Result<LegalAction> {
            let mut a = LegalAction::noop(env.case().n_gen());
            let bounds = env.action_space();
            for r in env.case().renewable_ids() {
                a.delta_p[r] = bounds[r].1;
            }
            Ok(a)
        }
    }
    let (case, series, env) = six_bus_setup();
    let (report, _) = evaluate("pin", &case, &series, &env, &[4], |_, _| Ok(Pin)).unwrap();
    assert!((report.episodes[0].renewable_consumption - 100.0).abs() < 1e-9);
    assert_eq!(report.episodes[0].curtailment_mwh, 0.0);
}

#[test]
fn noop_agent_has_no_hard_overflow() {
    let (case, series, env) = six_bus_setup();
    let (report, _) =
        evaluate("noop", &case, &series, &env, &[0, 1], |_, _| Ok(NoopAgent)).unwrap();
    assert!(report.episodes.iter().all(|m| m.hard_overflow_rate == 0.0));
}

fn info(step: usize, reward: f64, v: Violations, ren: (f64, f64), cost: f64) -> StepInfo {
    StepInfo {
        step,
        reward,
        components: RewardComponents::default(),
        violations: v,
        curtailment: ren.1 - ren.0,
        renewable_p: ren.0,
        renewable_p_max: ren.1,
        operating_cost: cost,
        slack_p: 0.0,
        grid_loss: 0.0,
        lines_out: 0,
        termination: None,
        detail: None,
    }
}

#[test]
fn metrics_from_a_scripted_trace() {
    let v = |voltage, balance| Violations {
        voltage,
        balance,
        ..Violations::default()
    };
    let mut trace = EpisodeTrace::default();
    trace.push(info(1, 1.5, v(true, false), (30.0, 40.0), 100.0));
    trace.push(info(2, 2.0, v(false, false), (50.0, 50.0), 200.0));
    trace.push(info(3, 2.5, v(true, true), (10.0, 30.0), 300.0));
    let mut last = info(4, -10.0, v(false, true), (10.0, 10.0), 400.0);
    last.termination = Some(TerminationReason::BalanceLimit);
    trace.push(last);
    let m = EpisodeMetrics::from_trace(&trace, 5);
    assert_eq!(m.steps, 4);
    assert_eq!(m.cumulative_reward, -4.0);
    assert_eq!(m.voltage_rate, 50.0);
    assert_eq!(m.balance_rate, 50.0);
    assert_eq!(m.hard_overflow_rate, 0.0);
    assert_eq!(m.operating_cost, 1000.0);
    assert!((m.renewable_consumption - 100.0 * 100.0 / 130.0).abs() < 1e-12);
    assert!((m.curtailment_mwh - 30.0 * 5.0 / 60.0).abs() < 1e-12);
    assert_eq!(m.load_shedding, 1);
    assert_eq!(m.illegal, 0);
}

#[test]
fn aggregate_and_exports() {
    let rows: Vec<EpisodeMetrics> = [1.0, 2.0, 4.0]
        .iter()
        .enumerate()
        .map(|(i, &r)| EpisodeMetrics {
            seed: i as u64,
            cumulative_reward: r,
            ..EpisodeMetrics::default()
        })
        .collect();
    let report = EvalReport::new("scripted", rows);
    assert!((report.aggregate.mean_of("cumulative_reward") - 7.0 / 3.0).abs() < 1e-12);
    let var = ((1.0f64 - 7.0 / 3.0).powi(2)
        + (2.0f64 - 7.0 / 3.0).powi(2)
        + (4.0f64 - 7.0 / 3.0).powi(2))
        / 2.0;
    assert!((report.aggregate.std_of("cumulative_reward") - var.sqrt()).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    report.write_csv(dir.path().join("r.csv")).unwrap();
    report.write_json(dir.path().join("r.json")).unwrap();
    write_comparison(&[report.clone(), report.clone()], dir.path().join("c.csv")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 2);
    let back: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(back.episodes, report.episodes);
    for (a, b) in back.aggregate.mean.iter().zip(&report.aggregate.mean) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let cmp = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 1 + METRIC_NAMES.len());
}

#[test]
fn curves_track_commitment() {
    let (case, series, env) = six_bus_setup();
    let cfg = DasConfig {
        noise: ForecastNoise::perfect(),
        ..DasConfig::default()
    };
    let (_, runs) = evaluate("das", &case, &series, &env, &[1], |e, s| {
        DasAgent::plan(e, &cfg, s)
    })
    .unwrap();
    let curves = &runs[0].curves;
    assert_eq!(curves.len(), runs[0].trace.steps.len() + 1);
    for c in curves {
        assert!(c.adjust_min_mw <= c.adjust_max_mw);
        assert!(c.renewable_mw <= c.renewable_max_mw + 1e-9);
    }
    let dir = tempfile::tempdir().unwrap();
    write_curves(curves, dir.path().join("curves.csv")).unwrap();
}
