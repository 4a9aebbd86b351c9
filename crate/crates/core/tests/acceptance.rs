//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exits nonzero when a criterion fails, except for gaps listed in
//! `KNOWN_GAPS`, which still print FAIL. Set `GRIDLAB_STRICT=1` to make
//! those fatal too.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use gridlab::baselines::{
    das_uc, evaluate, exact_uc_cost, priority_order, schedule_cost, shutdown_lead,
    CommitmentSchedule, DasAgent, DasConfig, DayForecast, EvalReport, ForecastNoise,
    PlannerAgent, RandomSafeAgent, UcConfig,
};
use gridlab::cases;
use gridlab::config::RunConfig;
use gridlab::env::{
    balance_reward, band_reward, make_profiles, overflow_reward, renewable_reward, EnvConfig,
    GridEnv, TerminationReason,
};
use gridlab::grid::{
    solve_power_flow, BusKind, BusSpec, GenKind, GeneratorSpec, GridCase, Injections, LineSpec,
    LoadSpec, PfOptions,
};
use gridlab::model::gradcheck::check_gradients;
use gridlab::model::{Checkpoint, Model, PolicyOutput};
use gridlab::planner::{
    search_with_candidates, select_child, ChildStats, Evaluation, MinMaxStats, PlannerConfig,
    SearchModel, SearchTree,
};
use gridlab::safety::RawAction;
use gridlab::selfcheck::{safety_fuzz, search_check};
use gridlab::training::{train, TrainOutcome};
use gridlab::Result;

const DESK: &str = include_str!("../../../configs/desk.toml");
const SMOKE: &str = include_str!("../../../configs/smoke.toml");
const SIX_BUS_REFERENCE: &str = include_str!("fixtures/six_bus_reference.json");

/// Criteria whose failure is reported but does not fail the run.
const KNOWN_GAPS: &[u32] = &[7];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let strict = std::env::var("GRIDLAB_STRICT").is_ok_and(|v| v == "1");
    let mut trained: Option<Arc<Model<f32>>> = None;
    let mut unexpected = 0;
    for id in 1..=10 {
        let clock = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match id {
            1 => powerflow_oracle(),
            2 => reward_formulas(),
            3 => safety_fuzz_rate(),
            4 => gradient_suite(),
            5 => search_invariants(),
            6 => determinism(),
            7 => {
                let (v, model) = training_trend();
                trained = model;
                v
            }
            8 => decision_latency(trained.clone()),
            9 => das_sanity(),
            _ => uc_near_optimal(),
        }));
        let v = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.passed { "PASS" } else { "FAIL" };
        let known = !v.passed && KNOWN_GAPS.contains(&id);
        println!(
            "criterion {id:>2} {tag}{} ({:.1} s): {}",
            if known { " [known gap]" } else { "" },
            clock.elapsed().as_secs_f64(),
            v.detail
        );
        if !v.passed && (!known || strict) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}

// 1 -------------------------------------------------------------------------

fn two_bus(x: f64, load: f64) -> GridCase {
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
            base_p: load,
            base_q: 0.0,
        }],
    )
    .unwrap()
}

fn powerflow_oracle() -> Verdict {
    // Lossless line, unity sending voltage, pure active load P:
    // Q = 0 gives V = cos θ, then P = -V sin θ / X gives sin 2θ = -2PX.
    let (x, p) = (0.1f64, 0.5f64);
    let theta = 0.5 * (-2.0 * p * x).asin();
    let v = theta.cos();
    let case = two_bus(x, p * 100.0);
    let inj = Injections::nominal(&case, vec![0.0], vec![p * 100.0], vec![0.0]);
    let sol = solve_power_flow(&case, &inj, &[true], &PfOptions::default(), None);
    let two_err = (sol.v_ang[1] - theta).abs().max((sol.v_mag[1] - v).abs());

    let r: Value = serde_json::from_str(SIX_BUS_REFERENCE).unwrap();
    let arr = |k: &str| -> Vec<f64> {
        r[k].as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect()
    };
    let six = cases::six_bus();
    let inj = Injections::nominal(
        &six,
        arr("gen_p"),
        six.loads.iter().map(|l| l.base_p).collect(),
        six.loads.iter().map(|l| l.base_q).collect(),
    );
    let lines = vec![true; six.n_line()];
    let opts = PfOptions {
        tol: 1e-12,
        max_iter: 30,
    };
    let s = solve_power_flow(&six, &inj, &lines, &opts, None);
    let sb = six.s_base;
    let mut dev: f64 = 0.0;
    for (got, key, scale) in [
        (&s.v_mag, "v_mag", 1.0),
        (&s.v_ang, "v_ang", 1.0),
        (&s.rho, "rho", 1.0),
        (&s.line_flow_p, "line_flow_p", sb),
        (&s.line_flow_q, "line_flow_q", sb),
    ] {
        for (a, b) in got.iter().zip(arr(key)) {
            dev = dev.max((a - b).abs() / scale);
        }
    }
    for (got, key) in [
        (s.slack_p, "slack_p"),
        (s.slack_q, "slack_q"),
        (s.grid_loss, "grid_loss"),
    ] {
        dev = dev.max((got - r[key].as_f64().unwrap()).abs() / sb);
    }

    let reps = 500;
    let clock = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(solve_power_flow(
            &six,
            &inj,
            &lines,
            &PfOptions::default(),
            None,
        ));
    }
    let per = clock.elapsed().as_secs_f64() / reps as f64;
    verdict(
        sol.converged && s.converged && two_err <= 1e-8 && dev <= 1e-6 && per < 1e-3,
        format!(
            "two-bus error {two_err:.1e} (θ {theta:.5}, V {v:.5}); six-bus deviation {dev:.1e}; {:.1} µs/solve",
            per * 1e6
        ),
    )
}

// 2 -------------------------------------------------------------------------

fn reward_formulas() -> Verdict {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    let mut worst: f64 = 0.0;
    let mut check = |got: f64, want: f64| worst = worst.max(rel(got, want));
    check(overflow_reward(&[0.5, 1.5]), 1.0 - (0.5 + 1.0) / 2.0);
    check(renewable_reward(&[10.0, 20.0], &[20.0, 20.0]), 30.0 / 40.0);
    let bal = balance_reward(110.0, 50.0, 100.0);
    check(bal, -10.0 / 50.0);
    check(bal.max(-0.1), -0.1);
    let c = 0.01 * 50.0 * 50.0 + 1.0 * 50.0 + 10.0;
    check(gridlab::env::cost_reward(c, 1e5), -85.0 / 1e5);
    let q = band_reward([(10.0, -20.0, 20.0), (-5.0, -10.0, 30.0)]);
    let zero_ok = q == 0.0;
    check(
        band_reward([(1.06, 0.95, 1.05)]),
        (-(1.06f64 - 1.05) / 0.1).exp() - 1.0,
    );

    // Live steps: recompute parts of the reward from the solved network.
    let case = Arc::new(cases::six_bus());
    let series = Arc::new(make_profiles(&case, 3, 2));
    let cfg = EnvConfig::default();
    let mut env = GridEnv::reset(case.clone(), series, cfg.clone(), 100, 5).unwrap();
    let mut agent = RandomSafeAgent::new(2);
    let bal = case.balanced();
    let mut live: f64 = 0.0;
    for _ in 0..30 {
        let a = gridlab::baselines::Agent::act(&mut agent, &env).unwrap();
        let step = env.step(&a).unwrap();
        let info = step.info;
        let sol = env.solution();
        let overflow =
            1.0 - sol.rho.iter().map(|r| r.min(1.0)).sum::<f64>() / sol.rho.len() as f64;
        let renewable = info.renewable_p / info.renewable_p_max;
        let balance = (-((info.slack_p - bal.p_max).max(0.0) + (bal.p_min - info.slack_p).max(0.0))
            / (bal.p_max - bal.p_min))
            .max(-cfg.penalty_clip);
        let excess: f64 = case
            .buses
            .iter()
            .zip(&sol.v_mag)
            .map(|(b, v)| ((v - b.v_max).max(0.0) + (b.v_min - v).max(0.0)) / (b.v_max - b.v_min))
            .sum();
        let voltage = ((-excess).exp() - 1.0).max(-cfg.penalty_clip);
        let c = info.components;
        for (got, want) in [
            (c.overflow, overflow),
            (c.renewable, renewable),
            (c.balance, balance),
            (c.voltage, voltage),
        ] {
            live = live.max((got - want).abs());
        }
        let total: f64 = c
            .as_array()
            .iter()
            .zip(&cfg.reward_weights)
            .map(|(r, w)| r * w)
            .sum();
        live = live.max((info.reward - total).abs());
        if step.done {
            break;
        }
    }
    verdict(
        worst <= 1e-12 && zero_ok && live <= 1e-12,
        format!("worst relative error {worst:.1e} on hand examples; live recomputation {live:.1e}"),
    )
}

// 3 -------------------------------------------------------------------------

fn safety_fuzz_rate() -> Verdict {
    let r = safety_fuzz(10_000, 2024).unwrap();
    verdict(
        r.cases == 10_000 && r.inside_rate() >= 0.999 && r.bound_violations == 0,
        format!(
            "{} cases, slack inside {:.2}%, {} bound violations ({} draws skipped)",
            r.cases,
            100.0 * r.inside_rate(),
            r.bound_violations,
            r.skipped
        ),
    )
}

// 4 -------------------------------------------------------------------------

fn gradient_suite() -> Verdict {
    let mut seen = std::collections::BTreeSet::new();
    let mut worst: f64 = 0.0;
    for k in 0..24u64 {
        let rep = check_gradients(k * 1_000).unwrap();
        seen.insert(rep.seed);
        worst = worst.max(rep.max_rel_error);
    }
    verdict(
        seen.len() >= 20 && worst <= 1e-4,
        format!("{} configurations, max relative error {worst:.2e}", seen.len()),
    )
}

// 5 -------------------------------------------------------------------------

/// Hidden state is the action path; reward and value are fixed hashes of it.
struct Hashed;

fn hash(xs: &[f64]) -> f64 {
    let s: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, v)| (i as f64 * 0.731 + 1.0) * v)
        .sum();
    (s * 43.758).sin()
}

fn flat_policy(n: usize) -> PolicyOutput<f64> {
    PolicyOutput {
        mu: vec![0.0; n],
        logstd: vec![-1.0; n],
        startup_logits: vec![0.0; n + 1],
        shutdown_logits: vec![0.0; n + 1],
    }
}

impl SearchModel for Hashed {
    fn initial(&self, obs: &[f64]) -> Result<Evaluation> {
        Ok(Evaluation {
            hidden: obs.to_vec(),
            reward: 0.0,
            value: hash(obs),
            policy: flat_policy(1),
        })
    }

    fn recurrent(&self, hidden: &[f64], action: &[f64]) -> Evaluation {
        let mut h = hidden.to_vec();
        h.extend_from_slice(action);
        Evaluation {
            reward: hash(&h),
            value: 2.0 * hash(&[hash(&h), 0.5]),
            hidden: h,
            policy: flat_policy(1),
        }
    }
}

/// Sum of discounted returns of every simulation through `id`, rebuilt
/// from the stored per-node predictions.
fn brute_w(tree: &SearchTree, id: usize) -> f64 {
    let n = &tree.nodes[id];
    let mut w = n.value_pred * f64::from(1 + n.revisits);
    for e in &n.edges {
        if let Some(c) = e.child {
            let ch = &tree.nodes[c];
            w += f64::from(ch.visits) * ch.reward + tree.discount * brute_w(tree, c);
        }
    }
    w
}

fn search_invariants() -> Verdict {
    let conserve = search_check(100, 11).unwrap();

    let mut backup_err: f64 = 0.0;
    let mut conserved = true;
    for seed in 0..20u64 {
        let cfg = PlannerConfig {
            num_simulations: 30,
            max_depth: 2,
            ..PlannerConfig::default()
        };
        let cands: Vec<RawAction> = [0.3, -0.6, 0.1]
            .iter()
            .map(|&a| RawAction::new(vec![a + seed as f64 * 0.01], 1, 1))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = search_with_candidates(&Hashed, &[seed as f64], &cands, &cfg, &mut rng).unwrap();
        conserved &= tree.visits_conserved();
        for id in 0..tree.nodes.len() {
            backup_err = backup_err.max((tree.nodes[id].value_sum - brute_w(&tree, id)).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut flips = 0;
    for _ in 0..2000 {
        let k = rng.random_range(1..10);
        let kids: Vec<ChildStats> = (0..k)
            .map(|_| {
                let visits = rng.random_range(0..30u32);
                ChildStats {
                    visits,
                    q: (visits > 0).then(|| rng.random_range(-3.0..3.0)),
                }
            })
            .collect();
        let shift = rng.random_range(-50.0..50.0);
        let mut a = MinMaxStats::default();
        let mut b = MinMaxStats::default();
        for q in kids.iter().filter_map(|c| c.q) {
            a.update(q);
            b.update(q + shift);
        }
        let moved: Vec<ChildStats> = kids
            .iter()
            .map(|c| ChildStats {
                visits: c.visits,
                q: c.q.map(|q| q + shift),
            })
            .collect();
        let (i, j) = (select_child(&kids, &a, 1.25), select_child(&moved, &b, 1.25));
        if i != j {
            // only a rounding-level tie may flip the choice
            let score = |cs: &[ChildStats], st: &MinMaxStats, n: usize| {
                let vis: Vec<f64> = cs.iter().filter_map(|c| c.q.map(|q| st.normalize(q))).collect();
                let fb = if vis.is_empty() { 0.0 } else { vis.iter().sum::<f64>() / vis.len() as f64 };
                let tot: u32 = cs.iter().map(|c| c.visits).sum();
                cs[n].q.map_or(fb, |q| st.normalize(q))
                    + 1.25 / cs.len() as f64 * f64::from(tot).sqrt() / (1.0 + f64::from(cs[n].visits))
            };
            if (score(&kids, &a, i) - score(&kids, &a, j)).abs() > 1e-9 {
                flips += 1;
            }
        }
    }
    verdict(
        conserve.passed && conserved && backup_err <= 1e-12 && flips == 0,
        format!(
            "{}; stub backup error {backup_err:.1e}; {flips} argmax changes under value shifts",
            conserve.detail
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn report_bytes(r: &EvalReport, dir: &std::path::Path, name: &str) -> Vec<u8> {
    // wall-clock columns are the only run-dependent fields
    let mut r = r.clone();
    for e in &mut r.episodes {
        e.wall_time_s = 0.0;
    }
    let r = EvalReport::new(r.agent.clone(), r.episodes);
    let p = dir.join(name);
    r.write_csv(&p).unwrap();
    std::fs::read(p).unwrap()
}

fn smoke_run(dir: &std::path::Path) -> (Vec<Vec<u8>>, TrainOutcome) {
    let cfg = RunConfig::from_toml(SMOKE).unwrap();
    let setup = cfg.train_setup().unwrap();
    let out = train(&setup, Some(dir)).unwrap();
    let mut files = Vec::new();
    for f in ["model.ckpt", "metrics.csv", "episodes.csv"] {
        files.push(std::fs::read(dir.join(f)).unwrap());
    }

    let model = Arc::new(out.model.clone());
    let case = setup.case.clone();
    let series = setup.series.clone();
    let seeds = &cfg.seeds.eval;
    let planner = cfg.planner.clone();
    let (gz, gz_runs) = evaluate("gridzero", &case, &series, &cfg.env, seeds, |_, s| {
        Ok(PlannerAgent::new(model.clone(), planner.clone(), s))
    })
    .unwrap();
    let (das, das_runs) = evaluate("das", &case, &series, &cfg.env, seeds, |e, s| {
        DasAgent::plan(e, &cfg.baseline, s)
    })
    .unwrap();
    let (rnd, rnd_runs) = evaluate("random", &case, &series, &cfg.env, seeds, |_, s| {
        Ok(RandomSafeAgent::new(s))
    })
    .unwrap();
    for (r, runs) in [(&gz, &gz_runs), (&das, &das_runs), (&rnd, &rnd_runs)] {
        files.push(report_bytes(r, dir, &format!("{}.csv", r.agent)));
        for (k, run) in runs.iter().enumerate() {
            let p = dir.join(format!("trace_{}_{k}.csv", r.agent));
            run.trace.write_csv(&p).unwrap();
            files.push(std::fs::read(p).unwrap());
        }
    }
    (files, out)
}

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, oa) = smoke_run(a.path());
    let (fb, ob) = smoke_run(b.path());
    let same_files = fa.len() == fb.len() && fa.iter().zip(&fb).all(|(x, y)| x == y);
    let ck = |o: &TrainOutcome| {
        Checkpoint {
            model: o.model.clone(),
            step: o.metrics.len() as u64,
            echo: Value::Null,
        }
        .to_bytes()
    };
    let same_model = ck(&oa) == ck(&ob);
    verdict(
        same_files && same_model && oa.episodes == ob.episodes,
        format!(
            "{} artifacts (checkpoint, metrics, episode log, 3 eval reports, {} traces) compared byte for byte",
            fa.len(),
            fa.len() - 6
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn pooled(a: &EvalReport, b: &EvalReport, m: &str) -> f64 {
    ((a.aggregate.std_of(m).powi(2) + b.aggregate.std_of(m).powi(2)) / 2.0).sqrt()
}

fn training_trend() -> (Verdict, Option<Arc<Model<f32>>>) {
    let cfg = RunConfig::from_toml(DESK).unwrap();
    let setup = cfg.train_setup().unwrap();
    let clock = Instant::now();
    let out = train(&setup, None).unwrap();
    let train_s = clock.elapsed().as_secs_f64();
    let model = Arc::new(out.model);
    let (case, series, env, seeds) = (&setup.case, &setup.series, &cfg.env, &cfg.seeds.eval);
    let planner = cfg.planner.clone();
    let m = model.clone();
    let (gz, _) = evaluate("gridzero", case, series, env, seeds, |_, s| {
        Ok(PlannerAgent::new(m.clone(), planner.clone(), s))
    })
    .unwrap();
    let (rnd, _) = evaluate("random", case, series, env, seeds, |_, s| {
        Ok(RandomSafeAgent::new(s))
    })
    .unwrap();
    let das_cfg = DasConfig::default();
    let (das, _) = evaluate("das", case, series, env, seeds, |e, s| {
        DasAgent::plan(e, &das_cfg, s)
    })
    .unwrap();

    let peak = (0..series.len())
        .map(|t| series.total_renewable(t) / series.total_load(t))
        .fold(0.0, f64::max);
    let r = "cumulative_reward";
    let c = "renewable_consumption";
    let margin = gz.aggregate.mean_of(r) - rnd.aggregate.mean_of(r);
    let sigma = pooled(&gz, &rnd, r);
    let reward_ok = margin >= 3.0 * sigma;
    let consumption_ok = gz.aggregate.mean_of(c) >= das.aggregate.mean_of(c);
    let budget_ok = peak >= 0.6 && out.env_steps <= 20_000 && train_s <= 1800.0;
    (
        verdict(
            reward_ok && consumption_ok && budget_ok,
            format!(
                "reward {:.1} ± {:.1} vs random {:.1} ± {:.1} (margin {:.1}σ) {}; renewable {:.1}% vs DAS-20% {:.1}% {}; {} env steps, {:.0} s, peak share {:.0}%",
                gz.aggregate.mean_of(r),
                gz.aggregate.std_of(r),
                rnd.aggregate.mean_of(r),
                rnd.aggregate.std_of(r),
                margin / sigma,
                if reward_ok { "ok" } else { "short" },
                gz.aggregate.mean_of(c),
                das.aggregate.mean_of(c),
                if consumption_ok { "ok" } else { "short" },
                out.env_steps,
                train_s,
                100.0 * peak
            ),
        ),
        Some(model),
    )
}

// 8 -------------------------------------------------------------------------

fn decision_latency(model: Option<Arc<Model<f32>>>) -> Verdict {
    let cfg = RunConfig::from_toml(DESK).unwrap();
    let case = Arc::new(cases::six_bus());
    let series = Arc::new(make_profiles(&case, 7, 2));
    let trained = model.is_some();
    let model = model.unwrap_or_else(|| {
        Arc::new(Model::new(
            &cfg.model,
            gridlab::training::model_shape(&case),
            0,
        ))
    });
    let planner = PlannerConfig::default();
    let mut env = GridEnv::reset(case, series, EnvConfig::default(), 0, 1).unwrap();
    let mut agent = PlannerAgent::new(model, planner.clone(), 1);
    let mut worst: f64 = 0.0;
    let mut total = 0.0;
    let mut n = 0;
    while !env.is_done() {
        let clock = Instant::now();
        let a = gridlab::baselines::Agent::act(&mut agent, &env).unwrap();
        let dt = clock.elapsed().as_secs_f64();
        worst = worst.max(dt);
        total += dt;
        n += 1;
        env.step(&a).unwrap();
    }
    verdict(
        planner.num_simulations == 50 && worst < 1.0,
        format!(
            "{n} decisions with {} simulations ({} model): mean {:.1} ms, max {:.1} ms",
            planner.num_simulations,
            if trained { "trained" } else { "untrained" },
            1e3 * total / n as f64,
            1e3 * worst
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn das_sanity() -> Verdict {
    let cfg = RunConfig::from_toml(DESK).unwrap();
    let case = Arc::new(cfg.case().unwrap());
    let series = Arc::new(cfg.series(&case).unwrap());
    let seeds = &cfg.seeds.eval;
    let perfect = DasConfig {
        noise: ForecastNoise::perfect(),
        ..DasConfig::default()
    };
    let (p, p_runs) = evaluate("das", &case, &series, &cfg.env, seeds, |e, s| {
        DasAgent::plan(e, &perfect, s)
    })
    .unwrap();
    let clean = p.episodes.iter().all(|e| e.steps == 288)
        && p_runs.iter().all(|r| {
            r.trace
                .steps
                .iter()
                .all(|s| s.termination != Some(TerminationReason::BalanceLimit))
        });
    let over = DasConfig {
        noise: ForecastNoise {
            renewable_scale: 2.0,
            ..ForecastNoise::perfect()
        },
        ..DasConfig::default()
    };
    let (_, o_runs) = evaluate("das_over", &case, &series, &cfg.env, seeds, |e, s| {
        DasAgent::plan(e, &over, s)
    })
    .unwrap();
    let hit = o_runs
        .iter()
        .filter(|r| {
            r.trace.steps.iter().any(|s| {
                s.violations.balance || s.termination == Some(TerminationReason::BalanceLimit)
            })
        })
        .count();
    verdict(
        clean && hit == o_runs.len(),
        format!(
            "perfect forecasts: {}/{} episodes complete without balance terminations; 2x renewable overestimation: {hit}/{} episodes with balance violations",
            p.episodes.iter().filter(|e| e.steps == 288).count(),
            seeds.len(),
            o_runs.len()
        ),
    )
}

// 10 ------------------------------------------------------------------------

/// Cheapest admissible schedule by enumerating every on/off pattern.
fn enumerate_uc(case: &GridCase, f: &DayForecast, p0: &[f64], cfg: &UcConfig) -> f64 {
    let units = priority_order(case);
    let lead = shutdown_lead(case, &units, p0);
    let (k, len) = (units.len(), f.len());
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
    for code in 0u64..1 << (k * len) {
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
            let led = (0..k).all(|j| t >= lead[j] || mask[j]);
            led && if cap(&vec![true; k]) < need {
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

fn uc_near_optimal() -> Verdict {
    let case = cases::nine_bus();
    let mid: Vec<f64> = case
        .generators
        .iter()
        .map(|g| 0.5 * (g.p_min + g.p_max))
        .collect();

    // exact solver against enumeration on short horizons
    let small = UcConfig {
        min_run: 2,
        ..UcConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut exact_err: f64 = 0.0;
    for _ in 0..4 {
        let f = DayForecast {
            load: (0..5).map(|_| rng.random_range(150.0..650.0)).collect(),
            renewable: (0..5).map(|_| rng.random_range(0.0..80.0)).collect(),
        };
        let x = exact_uc_cost(&case, &f, &mid, &small).unwrap();
        let e = enumerate_uc(&case, &f, &mid, &small);
        exact_err = exact_err.max((x - e).abs() / e);
    }

    let series = make_profiles(&case, 5, 4);
    let cfg = UcConfig::default();
    let mut worst: f64 = 0.0;
    for day in 0..4 {
        let f = DayForecast::new(&series, day * 288, 288, &ForecastNoise::perfect(), 0).unwrap();
        let h = schedule_cost(&case, &f, &das_uc(&case, &f, &mid, &cfg));
        let x = exact_uc_cost(&case, &f, &mid, &cfg).unwrap();
        worst = worst.max(h / x);
    }
    verdict(
        exact_err <= 1e-9 && worst <= 1.05,
        format!(
            "nine-bus, 3 thermal units, 4 days: worst heuristic/exact cost ratio {worst:.4}; exact solver vs enumeration {exact_err:.1e}"
        ),
    )
}
