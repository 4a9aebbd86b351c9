use std::path::Path;

use super::StepInfo;
use crate::error::{Error, Result};

const HEADER: [&str; 24] = [
    "step",
    "reward",
    "r_overflow",
    "r_renewable",
    "r_balance",
    "r_cost",
    "r_reactive",
    "r_voltage",
    "viol_voltage",
    "viol_reactive",
    "viol_balance",
    "viol_soft_overflow",
    "viol_hard_overflow",
    "curtailment_mw",
    "renewable_mw",
    "renewable_max_mw",
    "operating_cost",
    "slack_mw",
    "grid_loss_mw",
    "lines_out",
    "done",
    "termination",
    "detail",
    "cumulative_reward",
];

/// Step-by-step record of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<StepInfo>,
}

impl EpisodeTrace {
    pub fn push(&mut self, info: StepInfo) {
        self.steps.push(info);
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(HEADER)?;
        let mut total = 0.0;
        for s in &self.steps {
            total += s.reward;
            let c = s.components.as_array();
            let v = s.violations;
            let flag = |b: bool| (b as u8).to_string();
            let mut row: Vec<String> = vec![s.step.to_string(), s.reward.to_string()];
            row.extend(c.iter().map(f64::to_string));
            row.extend(
                [
                    v.voltage,
                    v.reactive,
                    v.balance,
                    v.soft_overflow,
                    v.hard_overflow,
                ]
                .map(flag),
            );
            row.extend(
                [
                    s.curtailment,
                    s.renewable_p,
                    s.renewable_p_max,
                    s.operating_cost,
                    s.slack_p,
                    s.grid_loss,
                ]
                .iter()
                .map(f64::to_string),
            );
            row.push(s.lines_out.to_string());
            row.push(flag(s.termination.is_some()));
            row.push(s.termination.map(|t| t.to_string()).unwrap_or_default());
            row.push(s.detail.clone().unwrap_or_default());
            row.push(total.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(())
    }
}
