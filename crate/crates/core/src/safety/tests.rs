use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::cases;
use crate::env::{EnvConfig, GridEnv, TimeSeries};

fn env() -> GridEnv {
    let case = cases::six_bus();
    let n = 300;
    let series = TimeSeries {
        load_p: case.loads.iter().map(|l| vec![l.base_p; n]).collect(),
        load_q: case.loads.iter().map(|l| vec![l.base_q; n]).collect(),
        renewable_p_max: vec![vec![60.0; n], vec![30.0; n]],
    };
    GridEnv::reset(Arc::new(case), Arc::new(series), EnvConfig::default(), 0, 0).unwrap()
}

/// Two adjustable units plus a balanced one, with hand-picked state.
fn two_unit_state() -> (GridCase, EnvState) {
    let env = env();
    let case = env.case().clone();
    let mut s = env.state().clone();
    s.gen_p[0] = 90.0;
    s.load_p = vec![100.0, 100.0, 100.0];
    (case, s)
}

#[test]
fn map_endpoints_and_midpoint() {
    let env = env();
    let (case, s) = (env.case(), env.state());
    let mut bounds = vec![(0.0, 0.0); 4];
    bounds[1] = (-5.0, 5.0);
    let up = map_action(case, s, &RawAction::new(vec![1.0, 0.0, 0.0], 3, 3), &bounds);
    assert_eq!(up.delta_p[1], 5.0);
    let mid = map_action(case, s, &RawAction::new(vec![0.0, 0.0, 0.0], 3, 3), &bounds);
    assert_eq!(mid.delta_p[1], 0.0);
    let low = map_action(
        case,
        s,
        &RawAction::new(vec![-1.0, 0.0, 0.0], 3, 3),
        &bounds,
    );
    assert_eq!(low.delta_p[1], -5.0);
}

#[test]
fn ineligible_switches_become_noop() {
    let env = env();
    let (case, s) = (env.case(), env.state());
    let bounds = env.action_space();
    // unit 1 is on: startup is ineligible; it is above p_min: shutdown is too
    let a = map_action(case, s, &RawAction::new(vec![0.0; 3], 0, 0), &bounds);
    assert_eq!((a.startup, a.shutdown), (None, None));
    // renewables never switch
    let a = map_action(case, s, &RawAction::new(vec![0.0; 3], 1, 2), &bounds);
    assert_eq!((a.startup, a.shutdown), (None, None));

    let mut off = s.clone();
    off.gen_status[1] = false;
    off.gen_p[1] = 0.0;
    let b = crate::env::action_space(case, &off, &[60.0, 30.0]);
    let a = map_action(case, &off, &RawAction::new(vec![0.3; 3], 0, 3), &b);
    assert_eq!(a.startup, Some(1));
    assert_eq!(a.delta_p[1], case.generators[1].p_min);
    off.steps_to_recover[1] = 3;
    let a = map_action(case, &off, &RawAction::new(vec![0.3; 3], 0, 3), &b);
    assert_eq!(a.startup, None);
    assert_eq!(a.delta_p[1], 0.0);

    let mut low = s.clone();
    low.gen_p[1] = case.generators[1].p_min;
    let b = crate::env::action_space(case, &low, &[60.0, 30.0]);
    let a = map_action(case, &low, &RawAction::new(vec![0.0; 3], 3, 0), &b);
    assert_eq!(a.shutdown, Some(1));
    assert_eq!(a.delta_p[1], -low.gen_p[1]);
}

#[test]
fn unmap_inverts_map() {
    let env = env();
    let bounds = env.action_space();
    let raw = RawAction::new(vec![0.25, -0.5, 0.75], 3, 3);
    let legal = map_action(env.case(), env.state(), &raw, &bounds);
    let back = unmap_action(env.case(), &legal, &bounds);
    for (a, b) in raw.a_p.iter().zip(&back.a_p) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(back.a_o, raw.a_o);
}

#[test]
fn proportional_readjustment() {
    let (case, s) = two_unit_state();
    let mut bounds = vec![(0.0, 0.0); 4];
    bounds[1] = (-10.0, 4.0);
    bounds[2] = (-10.0, 3.0);
    let mut action = LegalAction::noop(4);
    action.delta_p[1] = 1.0;
    action.delta_p[2] = 2.0;
    let forecast = Forecast {
        next_load_p: vec![105.0, 100.0, 100.0],
        next_renewable_p_max: vec![60.0, 30.0],
    };
    let mut s = s;
    s.gen_status[3] = false;
    let out = legalize(&case, &s, &action, &forecast, &bounds, 1.0);
    assert!((out.objective - 2.0).abs() < 1e-12);
    assert!((out.action.delta_p[1] - 2.5).abs() < 1e-12);
    assert!((out.action.delta_p[2] - 2.5).abs() < 1e-12);
    assert_eq!(out.action.delta_p[3], 0.0);
    assert!(!out.infeasible);
}

#[test]
fn below_threshold_is_unchanged() {
    let (case, s) = two_unit_state();
    let bounds = vec![(-10.0, 10.0); 4];
    let action = LegalAction::noop(4);
    let forecast = Forecast {
        next_load_p: s.load_p.clone(),
        next_renewable_p_max: vec![60.0, 30.0],
    };
    let out = legalize(&case, &s, &action, &forecast, &bounds, 5.0);
    assert_eq!(out.objective, 0.0);
    assert_eq!(out.action, action);
}

#[test]
fn pull_toward_safe_range() {
    let (lo, hi, d) = (30.0, 150.0, 5.0);
    assert_eq!(balance_pull(hi - d / 2.0, lo, hi, d), d / 2.0);
    assert_eq!(balance_pull(lo + d / 2.0, lo, hi, d), -d / 2.0);
    assert_eq!(balance_pull(90.0, lo, hi, d), 0.0);
}

#[test]
fn infeasible_is_flagged() {
    let (case, s) = two_unit_state();
    let mut bounds = vec![(0.0, 0.0); 4];
    bounds[1] = (-1.0, 1.0);
    let forecast = Forecast {
        next_load_p: vec![150.0, 100.0, 100.0],
        next_renewable_p_max: vec![60.0, 30.0],
    };
    let out = legalize(&case, &s, &LegalAction::noop(4), &forecast, &bounds, 5.0);
    assert!(out.infeasible);
    assert_eq!(out.action.delta_p[1], 1.0);
}

fn arb_case_state() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, f64, f64)> {
    (
        proptest::collection::vec(0.0f64..20.0, 3),
        proptest::collection::vec(-1.0f64..1.0, 3),
        proptest::collection::vec(any::<bool>(), 3),
        -40.0f64..40.0,
        0.0f64..180.0,
    )
}

proptest! {
    #[test]
    fn legalize_invariants((widths, a_p, on, load_step, p_bal) in arb_case_state()) {
        let (case, mut s) = two_unit_state();
        s.gen_p[0] = p_bal;
        let mut bounds = vec![(0.0, 0.0); 4];
        for i in 1..4 {
            s.gen_status[i] = on[i - 1] || i != 1;
            bounds[i] = if s.gen_status[i] { (-widths[i - 1], widths[i - 1]) } else { (0.0, 0.0) };
        }
        s.gen_status[1] = on[0];
        if !on[0] { bounds[1] = (0.0, 0.0); }
        let raw = RawAction::new(a_p, 3, 3);
        let action = map_action(&case, &s, &raw, &bounds);
        let forecast = Forecast {
            next_load_p: s.load_p.iter().map(|l| l + load_step / 3.0).collect(),
            next_renewable_p_max: vec![60.0, 30.0],
        };
        let delta = 5.0;
        let out = legalize(&case, &s, &action, &forecast, &bounds, delta);
        for i in 0..4 {
            let (lo, hi) = bounds[i];
            prop_assert!(out.action.delta_p[i] >= lo - 1e-9 && out.action.delta_p[i] <= hi + 1e-9);
            if !s.gen_status[i] { prop_assert_eq!(out.action.delta_p[i], 0.0); }
        }
        let room: f64 = (1..4).filter(|&i| s.gen_status[i]).map(|i| {
            let (lo, hi) = bounds[i];
            if out.objective > 0.0 { hi - action.delta_p[i] } else { action.delta_p[i] - lo }
        }).sum();
        if room >= out.objective.abs() {
            let pull = balance_pull(p_bal, 30.0, 150.0, delta);
            let gap = out.action.total(&case) - load_step - pull;
            prop_assert!(gap.abs() <= threshold(delta) + 1e-9, "gap {}", gap);
            let again = legalize(&case, &s, &out.action, &forecast, &bounds, delta);
            prop_assert_eq!(&again.action, &out.action);
        }
    }

    #[test]
    fn map_respects_bounds(a_p in proptest::collection::vec(-1.0f64..1.0, 3)) {
        let env = env();
        let bounds = env.action_space();
        let a = map_action(env.case(), env.state(), &RawAction::new(a_p, 3, 3), &bounds);
        for (d, (lo, hi)) in a.delta_p.iter().zip(&bounds) {
            prop_assert!(*d >= *lo - 1e-12 && *d <= *hi + 1e-12);
        }
    }
}
