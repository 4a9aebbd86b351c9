//! Invariant suite behind the `selfcheck` command.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::baselines::{Agent, RandomSafeAgent};
use crate::cases;
use crate::env::{make_profiles, EnvConfig, GridEnv, LEGALITY_EPS};
use crate::error::Result;
use crate::grid::{
    solve_power_flow, BusKind, BusSpec, GenKind, GeneratorSpec, GridCase, Injections, LineSpec,
    LoadSpec, PfOptions,
};
use crate::model::gradcheck::check_gradients;
use crate::model::{Model, ModelConfig};
use crate::planner::{search_with_candidates, PlannerConfig};
use crate::safety::{legalize, map_action, RawAction};
use crate::training::model_shape;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Lossless line `0–1` with reactance `x` p.u. feeding `load_mw` at bus 1.
pub fn two_bus_case(x: f64, load_mw: f64) -> GridCase {
    let bus = |id, kind| BusSpec {
        id,
        kind,
        v_max: 1.05,
        v_min: 0.95,
    };
    GridCase::new(
        100.0,
        vec![bus(0, BusKind::Slack), bus(1, BusKind::Pq)],
        vec![LineSpec {
            from_bus: 0,
            to_bus: 1,
            r: 0.0,
            x,
            b: 0.0,
            i_max: 1.0,
        }],
        vec![GeneratorSpec {
            bus: 0,
            kind: GenKind::Balanced,
            p_max: 200.0,
            p_min: 0.0,
            q_max: 100.0,
            q_min: -100.0,
            v_set: 1.0,
            ramp_rate: 0.0,
            c2: 0.0,
            c1: 0.0,
            c0: 0.0,
            c_onoff: 0.0,
        }],
        vec![LoadSpec {
            bus: 1,
            base_p: load_mw,
            base_q: 0.0,
        }],
    )
    .expect("two-bus case is valid")
}

/// Frozen reference solution of the bundled six-bus case at base load.
#[derive(Debug, Clone, Deserialize)]
pub struct PfReference {
    pub gen_p: Vec<f64>,
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub slack_p: f64,
    pub slack_q: f64,
    pub grid_loss: f64,
    pub rho: Vec<f64>,
    pub line_flow_p: Vec<f64>,
    pub line_flow_q: Vec<f64>,
}

pub const SIX_BUS_REFERENCE: &str = include_str!("../tests/fixtures/six_bus_reference.json");

/// Largest deviation of the solver from the six-bus reference and the mean
/// solve time in seconds.
pub fn six_bus_deviation() -> (f64, f64) {
    let reference: PfReference =
        serde_json::from_str(SIX_BUS_REFERENCE).expect("bundled reference parses");
    let case = cases::six_bus();
    let inj = Injections::nominal(
        &case,
        reference.gen_p.clone(),
        case.loads.iter().map(|l| l.base_p).collect(),
        case.loads.iter().map(|l| l.base_q).collect(),
    );
    let opts = PfOptions {
        tol: 1e-12,
        max_iter: 30,
    };
    let lines = vec![true; case.n_line()];
    let sol = solve_power_flow(&case, &inj, &lines, &opts, None);
    let s = case.s_base;
    let mut worst: f64 = 0.0;
    let mut cmp = |a: &[f64], b: &[f64], scale: f64| {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs() / scale);
        }
    };
    cmp(&sol.v_mag, &reference.v_mag, 1.0);
    cmp(&sol.v_ang, &reference.v_ang, 1.0);
    cmp(&sol.line_flow_p, &reference.line_flow_p, s);
    cmp(&sol.line_flow_q, &reference.line_flow_q, s);
    cmp(
        &[sol.slack_p, sol.slack_q, sol.grid_loss],
        &[reference.slack_p, reference.slack_q, reference.grid_loss],
        s,
    );
    if !sol.converged {
        worst = f64::INFINITY;
    }
    let reps = 200;
    let clock = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(solve_power_flow(
            &case,
            &inj,
            &lines,
            &PfOptions::default(),
            None,
        ));
    }
    (worst, clock.elapsed().as_secs_f64() / reps as f64)
}

pub fn powerflow_checks() -> Vec<Check> {
    let case = two_bus_case(0.1, 50.0);
    let inj = Injections::nominal(&case, vec![0.0], vec![50.0], vec![0.0]);
    let sol = solve_power_flow(&case, &inj, &[true], &PfOptions::default(), None);
    let theta = 0.5 * (-2.0f64 * 0.5 * 0.1).asin();
    let err = (sol.v_ang[1] - theta)
        .abs()
        .max((sol.v_mag[1] - theta.cos()).abs());
    let (dev, secs) = six_bus_deviation();
    vec![
        Check::new(
            "powerflow.two_bus",
            sol.converged && err <= 1e-8,
            format!("max error {err:.2e} p.u."),
        ),
        Check::new(
            "powerflow.six_bus_reference",
            dev <= 1e-6,
            format!("max deviation {dev:.2e} p.u."),
        ),
        Check::new(
            "powerflow.runtime",
            secs < 1e-3,
            format!("{:.1} µs per solve", secs * 1e6),
        ),
    ]
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FuzzReport {
    /// Pairs stepped through the environment.
    pub cases: usize,
    /// Draws discarded for lack of headroom or an ended episode.
    pub skipped: usize,
    /// Steps whose balanced output stayed inside its limits.
    pub slack_inside: usize,
    /// Adjustments outside their bounds.
    pub bound_violations: usize,
}

impl FuzzReport {
    pub fn inside_rate(&self) -> f64 {
        self.slack_inside as f64 / self.cases.max(1) as f64
    }
}

/// Random states reached by a random-safe walk on the six-bus case, random
/// raw actions, zero forecast noise. Draws whose readjustment exceeds the
/// available headroom are skipped.
pub fn safety_fuzz(cases: usize, seed: u64) -> Result<FuzzReport> {
    let case = Arc::new(cases::six_bus());
    let series = Arc::new(make_profiles(&case, seed, 3));
    let cfg = EnvConfig::default();
    let last = series.len() - cfg.episode_len;
    let n = case.controllable_ids().len();
    let bal = case.balanced();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FuzzReport::default();
    while report.cases < cases {
        let start = rng.random_range(0..=last);
        let mut env = GridEnv::reset(case.clone(), series.clone(), cfg.clone(), start, rng.random())?;
        let mut walker = RandomSafeAgent::new(rng.random());
        for _ in 0..rng.random_range(0..24) {
            if env.is_done() {
                break;
            }
            let a = walker.act(&env)?;
            env.step(&a)?;
        }
        if env.is_done() {
            report.skipped += 1;
            continue;
        }
        let a_p = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let raw = RawAction::new(a_p, rng.random_range(0..=n), rng.random_range(0..=n));
        let bounds = env.action_space();
        let mapped = map_action(&case, env.state(), &raw, &bounds);
        let out = legalize(
            &case,
            env.state(),
            &mapped,
            env.forecast(),
            &bounds,
            cfg.balance_redundancy,
        );
        if out.infeasible {
            report.skipped += 1;
            continue;
        }
        report.cases += 1;
        for (i, g) in case.generators.iter().enumerate() {
            if g.kind == GenKind::Balanced || out.action.switching(i) {
                continue;
            }
            let (lo, hi) = bounds[i];
            let d = out.action.delta_p[i];
            if d < lo - LEGALITY_EPS || d > hi + LEGALITY_EPS {
                report.bound_violations += 1;
            }
        }
        let step = env.step(&out.action)?;
        if (bal.p_min..=bal.p_max).contains(&step.info.slack_p) {
            report.slack_inside += 1;
        }
    }
    Ok(report)
}

pub fn safety_check(cases: usize, seed: u64) -> Result<Check> {
    let r = safety_fuzz(cases, seed)?;
    Ok(Check::new(
        "safety.fuzz",
        r.inside_rate() >= 0.999 && r.bound_violations == 0,
        format!(
            "{} cases, slack inside {:.3}%, {} bound violations, {} skipped",
            r.cases,
            100.0 * r.inside_rate(),
            r.bound_violations,
            r.skipped
        ),
    ))
}

pub fn gradient_check(configs: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for seed in 0..configs {
        worst = worst.max(check_gradients(seed)?.max_rel_error);
    }
    Ok(Check::new(
        "model.gradients",
        worst <= 1e-4,
        format!("{configs} configurations, max relative error {worst:.2e}"),
    ))
}

/// Visit conservation on searches from a randomly initialized model.
pub fn search_check(searches: usize, seed: u64) -> Result<Check> {
    let case = cases::six_bus();
    let shape = model_shape(&case);
    let model_cfg = ModelConfig {
        hidden: 8,
        repr_widths: vec![16],
        dyn_widths: vec![16],
        reward_widths: vec![8],
        pred_widths: vec![16],
        proj_widths: vec![8, 8],
        ..ModelConfig::default()
    };
    let model = Model::<f64>::new(&model_cfg, shape, seed);
    let cfg = PlannerConfig {
        max_depth: 4,
        ..PlannerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0;
    for _ in 0..searches {
        let obs: Vec<f64> = (0..shape.obs_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let k = rng.random_range(1..8);
        let cands: Vec<RawAction> = (0..k)
            .map(|_| {
                let a_p = (0..shape.n_ctrl)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                RawAction::new(a_p, shape.n_ctrl, shape.n_ctrl)
            })
            .collect();
        let tree = search_with_candidates(&model, &obs, &cands, &cfg, &mut rng)?;
        if tree.visits_conserved() && tree.root().visits as usize == cfg.num_simulations + 1 {
            ok += 1;
        }
    }
    Ok(Check::new(
        "planner.visit_conservation",
        ok == searches,
        format!("{ok}/{searches} searches conserved"),
    ))
}

/// Every check with its default size.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut out = powerflow_checks();
    out.push(safety_check(10_000, seed)?);
    out.push(gradient_check(20)?);
    out.push(search_check(50, seed)?);
    Ok(out)
}
