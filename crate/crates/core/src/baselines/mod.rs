//! Reference policies and the evaluation harness.

mod agents;
mod ed;
mod eval;
mod uc;

pub use agents::{Agent, DasAgent, DasConfig, NoopAgent, PlannerAgent, RandomSafeAgent};
pub use ed::{das_ed, economic_dispatch, Dispatch, DispatchUnit};
pub use eval::{
    episode_start, evaluate, run_episode, write_comparison, write_curves, Aggregate, CurveRow,
    EpisodeMetrics, EpisodeRun, EvalReport, METRIC_NAMES,
};
pub use uc::{
    das_uc, exact_uc_cost, priority_order, repair_runs, schedule_cost, shutdown_lead,
    CommitmentSchedule, DayForecast, ForecastNoise, UcConfig, EXACT_MAX_UNITS,
};

#[cfg(test)]
mod tests;
