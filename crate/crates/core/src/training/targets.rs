//! Episode records and unroll targets.

use serde::{Deserialize, Serialize};

use crate::env::TerminationReason;
use crate::model::{UnrollSample, UnrollStep};
use crate::safety::{LegalAction, RawAction};

/// One played episode. Observation `t` precedes action `t`; the final
/// observation follows the last action.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    /// Executed actions in policy-space encoding.
    pub actions: Vec<RawAction>,
    pub legal: Vec<LegalAction>,
    /// Environment rewards.
    pub rewards: Vec<f64>,
    /// Root visit distributions.
    pub policies: Vec<Vec<f64>>,
    pub candidates: Vec<Vec<RawAction>>,
    pub root_values: Vec<f64>,
    pub termination: Option<TerminationReason>,
    pub seed: u64,
    pub start: usize,
}

impl Trajectory {
    pub fn new(first_obs: Vec<f64>, seed: u64, start: usize) -> Self {
        Trajectory {
            observations: vec![first_obs],
            actions: Vec::new(),
            legal: Vec::new(),
            rewards: Vec::new(),
            policies: Vec::new(),
            candidates: Vec::new(),
            root_values: Vec::new(),
            termination: None,
            seed,
            start,
        }
    }

    /// Number of actions taken.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Lengths agree and a finished episode names its reason.
    pub fn is_consistent(&self) -> bool {
        let t = self.len();
        self.observations.len() == t + 1
            && [
                self.legal.len(),
                self.rewards.len(),
                self.policies.len(),
                self.candidates.len(),
                self.root_values.len(),
            ]
            .iter()
            .all(|n| *n == t)
            && self
                .policies
                .iter()
                .zip(&self.candidates)
                .all(|(p, c)| p.len() == c.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub unroll_steps: usize,
    pub td_steps: usize,
    pub discount: f64,
    /// Multiplier applied to environment rewards before they become targets.
    pub reward_scale: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            unroll_steps: 5,
            td_steps: 5,
            discount: 0.99,
            reward_scale: 0.05,
        }
    }
}

/// n-step bootstrapped value target at position `j` of a trajectory with
/// `rewards.len()` actions.
///
/// `bootstrap` supplies the value of observation `j + td` and is only asked
/// when that observation lies strictly before the end of the episode. The
/// terminal state itself is worth zero.
pub fn value_target(
    rewards: &[f64],
    j: usize,
    cfg: &TargetConfig,
    bootstrap: &mut dyn FnMut(usize) -> f64,
) -> f64 {
    let t = rewards.len();
    if j >= t {
        return 0.0;
    }
    let mut z = 0.0;
    let mut g = 1.0;
    for i in 0..cfg.td_steps {
        if j + i >= t {
            break;
        }
        z += g * cfg.reward_scale * rewards[j + i];
        g *= cfg.discount;
    }
    let b = j + cfg.td_steps;
    if b < t {
        z += cfg.discount.powi(cfg.td_steps as i32) * bootstrap(b);
    }
    z
}

/// Policy target source for one position.
pub type PolicyTarget = (Vec<f64>, Vec<RawAction>);

/// Assemble the unroll sample starting at `position`.
///
/// `policy` yields the search target for any position before the end of
/// the episode; `bootstrap` yields the target-network value of an
/// observation index.
pub fn make_sample(
    traj: &Trajectory,
    position: usize,
    weight: f64,
    cfg: &TargetConfig,
    policy: &mut dyn FnMut(usize) -> PolicyTarget,
    bootstrap: &mut dyn FnMut(usize) -> f64,
) -> UnrollSample {
    let t = traj.len();
    assert!(position < t, "position past the last action");
    let n = traj.actions[0].n();
    let steps = (0..=cfg.unroll_steps)
        .map(|k| {
            let j = position + k;
            if j > t {
                return UnrollStep {
                    action: RawAction::noop(n).encode(),
                    reward_target: 0.0,
                    value_target: 0.0,
                    policy_target: None,
                    observation: None,
                    consistency_target: None,
                    masked: true,
                };
            }
            let (action, reward_target) = if k == 0 {
                (RawAction::noop(n).encode(), 0.0)
            } else {
                (
                    traj.actions[j - 1].encode(),
                    cfg.reward_scale * traj.rewards[j - 1],
                )
            };
            UnrollStep {
                action,
                reward_target,
                value_target: value_target(&traj.rewards, j, cfg, bootstrap),
                policy_target: (j < t).then(|| policy(j)),
                observation: (k > 0).then(|| traj.observations[j].clone()),
                consistency_target: None,
                masked: false,
            }
        })
        .collect();
    UnrollSample {
        observation: traj.observations[position].clone(),
        steps,
        weight,
    }
}
