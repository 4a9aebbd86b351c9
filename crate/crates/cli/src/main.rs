use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gridlab::baselines::{
    evaluate, write_comparison, write_curves, DasAgent, EpisodeRun, EvalReport, NoopAgent,
    PlannerAgent, RandomSafeAgent,
};
use gridlab::config::{write_run_artifacts, Manifest, RunConfig};
use gridlab::env::TimeSeries;
use gridlab::grid::{solve_power_flow, GenKind, GridCase, Injections, PfOptions};
use gridlab::model::load_checkpoint;
use gridlab::seed::derive_seed;
use gridlab::selfcheck;
use gridlab::training::train;
use gridlab::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "gridlab", version, about = "Grid scheduling environment, planner and baselines")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled case name or case JSON file.
    #[arg(long, global = true)]
    case: Option<String>,
    /// Time-series CSV.
    #[arg(long, global = true)]
    series: Option<PathBuf>,
    /// Run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; GRIDLAB_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the case at base load and print the solution.
    Powerflow,
    /// Write synthetic load and renewable profiles as CSV.
    MakeProfiles {
        #[arg(long)]
        days: Option<usize>,
    },
    /// Train the planning agent.
    Train,
    /// Evaluate a checkpoint over the evaluation seeds.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a baseline policy over the evaluation seeds.
    Baseline {
        #[arg(long, value_enum, default_value_t = BaselineKind::Das)]
        agent: BaselineKind,
    },
    /// Evaluate baselines and optionally a checkpoint side by side.
    Compare {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the invariant suite; exits nonzero on any failure.
    Selfcheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    Das,
    Random,
    Noop,
}

impl BaselineKind {
    fn name(self) -> &'static str {
        match self {
            BaselineKind::Das => "das",
            BaselineKind::Random => "random",
            BaselineKind::Noop => "noop",
        }
    }
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

impl Run {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(c) = &common.case {
            cfg.paths.case = c.clone();
        }
        if let Some(s) = &common.series {
            cfg.paths.series = Some(s.clone());
        }
        if let Some(s) = common.seed {
            cfg.seeds.run = s;
        }
        if let Some(n) = common.steps {
            cfg.training.total_steps = n;
        }
        if let Some(o) = &common.out {
            cfg.paths.out = o.clone();
        }
        if let Some(o) = std::env::var_os("GRIDLAB_OUT").filter(|o| !o.is_empty()) {
            cfg.paths.out = PathBuf::from(o);
        }
        cfg.validate()?;
        let out = cfg.paths.out.clone();
        Ok(Run { cfg, out })
    }

    fn start(&self, command: &str) -> Result<()> {
        let args = std::env::args().skip(1).collect();
        write_run_artifacts(&self.out, &Manifest::new(command, args, &self.cfg), &self.cfg)
    }

    fn inputs(&self) -> Result<(Arc<GridCase>, Arc<TimeSeries>)> {
        let case = self.cfg.case()?;
        let series = self.cfg.series(&case)?;
        Ok((Arc::new(case), Arc::new(series)))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let run = Run::new(&cli.common)?;
    match &cli.command {
        Command::Powerflow => powerflow(&run),
        Command::MakeProfiles { days } => {
            let mut cfg = run.cfg.clone();
            if let Some(d) = days {
                cfg.profiles.days = *d;
            }
            let case = cfg.case()?;
            let series = gridlab::env::make_profiles(&case, cfg.seeds.profiles, cfg.profiles.days);
            let path = run.out.join("series.csv");
            std::fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
            series.write_csv(&path)?;
            println!("wrote {} ({} steps)", path.display(), series.len());
            Ok(true)
        }
        Command::Train => {
            run.start("train")?;
            let setup = run.cfg.train_setup()?;
            let outcome = train(&setup, Some(&run.out))?;
            println!(
                "trained {} steps, {} env steps, {} episodes; outputs in {}",
                outcome.metrics.len(),
                outcome.env_steps,
                outcome.episodes.len(),
                run.out.display()
            );
            Ok(true)
        }
        Command::Eval { checkpoint } => {
            run.start("eval")?;
            let (case, series) = run.inputs()?;
            let (report, runs) = eval_checkpoint(&run, &case, &series, checkpoint)?;
            export(&run.out, &report, &runs)?;
            summary(&report);
            Ok(true)
        }
        Command::Baseline { agent } => {
            run.start("baseline")?;
            let (case, series) = run.inputs()?;
            let (report, runs) = eval_baseline(&run, &case, &series, *agent)?;
            export(&run.out, &report, &runs)?;
            summary(&report);
            Ok(true)
        }
        Command::Compare { checkpoint } => {
            run.start("compare")?;
            let (case, series) = run.inputs()?;
            let mut reports = Vec::new();
            if let Some(ck) = checkpoint {
                let (r, runs) = eval_checkpoint(&run, &case, &series, ck)?;
                export(&run.out, &r, &runs)?;
                reports.push(r);
            }
            for kind in [BaselineKind::Das, BaselineKind::Random] {
                let (r, runs) = eval_baseline(&run, &case, &series, kind)?;
                export(&run.out, &r, &runs)?;
                reports.push(r);
            }
            write_comparison(&reports, run.out.join("comparison.csv"))?;
            for r in &reports {
                summary(r);
            }
            Ok(true)
        }
        Command::Selfcheck => {
            let checks = selfcheck::run_all(run.cfg.seeds.run)?;
            for c in &checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {:<28} {}", c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn powerflow(run: &Run) -> Result<bool> {
    let case = run.cfg.case()?;
    let gen_p = case
        .generators
        .iter()
        .map(|g| match g.kind {
            GenKind::Balanced => 0.0,
            _ => 0.5 * (g.p_min + g.p_max),
        })
        .collect();
    let inj = Injections::nominal(
        &case,
        gen_p,
        case.loads.iter().map(|l| l.base_p).collect(),
        case.loads.iter().map(|l| l.base_q).collect(),
    );
    let lines = vec![true; case.n_line()];
    let sol = solve_power_flow(&case, &inj, &lines, &PfOptions::default(), None);
    println!(
        "converged {} in {} iterations (mismatch {:.2e} p.u.)",
        sol.converged, sol.iterations, sol.max_mismatch
    );
    println!("bus  v_mag     v_ang_rad");
    for (b, (m, a)) in case.buses.iter().zip(sol.v_mag.iter().zip(&sol.v_ang)) {
        println!("{:<4} {m:.6} {a:+.6}", b.id);
    }
    println!("line from to  p_mw       q_mvar     rho");
    for (k, l) in case.lines.iter().enumerate() {
        println!(
            "{k:<4} {:<4} {:<3} {:+10.4} {:+10.4} {:.4}",
            l.from_bus, l.to_bus, sol.line_flow_p[k], sol.line_flow_q[k], sol.rho[k]
        );
    }
    println!(
        "slack_p {:.4} MW, slack_q {:.4} MVAr, loss {:.4} MW",
        sol.slack_p, sol.slack_q, sol.grid_loss
    );
    Ok(sol.converged)
}

type Evaluated = (EvalReport, Vec<EpisodeRun>);

fn eval_checkpoint(
    run: &Run,
    case: &Arc<GridCase>,
    series: &Arc<TimeSeries>,
    path: &Path,
) -> Result<Evaluated> {
    let model = Arc::new(load_checkpoint(path)?.model);
    let planner = run.cfg.planner.clone();
    evaluate(
        "gridzero",
        case,
        series,
        &run.cfg.env,
        &run.cfg.seeds.eval,
        |_, seed| {
            Ok(PlannerAgent::new(
                model.clone(),
                planner.clone(),
                derive_seed(seed, 0, 0),
            ))
        },
    )
}

fn eval_baseline(
    run: &Run,
    case: &Arc<GridCase>,
    series: &Arc<TimeSeries>,
    kind: BaselineKind,
) -> Result<Evaluated> {
    let (env, seeds) = (&run.cfg.env, &run.cfg.seeds.eval);
    match kind {
        BaselineKind::Das => {
            let das = run.cfg.baseline.clone();
            evaluate("das", case, series, env, seeds, |e, seed| {
                DasAgent::plan(e, &das, seed)
            })
        }
        BaselineKind::Random => evaluate("random", case, series, env, seeds, |_, seed| {
            Ok(RandomSafeAgent::new(seed))
        }),
        BaselineKind::Noop => evaluate(kind.name(), case, series, env, seeds, |_, _| {
            Ok(NoopAgent)
        }),
    }
}

fn export(dir: &Path, report: &EvalReport, runs: &[EpisodeRun]) -> Result<()> {
    report.write_csv(dir.join(format!("{}.csv", report.agent)))?;
    report.write_json(dir.join(format!("{}.json", report.agent)))?;
    for (m, r) in report.episodes.iter().zip(runs) {
        write_curves(
            &r.curves,
            dir.join(format!("curves_{}_{}.csv", report.agent, m.seed)),
        )?;
    }
    Ok(())
}

fn summary(r: &EvalReport) {
    let a = &r.aggregate;
    println!(
        "{:<9} reward {:.2} ± {:.2}  renewable {:.2}%  steps {:.1}  shedding {:.2}",
        r.agent,
        a.mean_of("cumulative_reward"),
        a.std_of("cumulative_reward"),
        a.mean_of("renewable_consumption"),
        a.mean_of("steps"),
        a.mean_of("load_shedding"),
    );
}
