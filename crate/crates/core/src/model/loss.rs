//! Unrolled training loss and its exact gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dist::squash_clip;
use super::tape::{Tape, Var};
use super::{Model, ParamSet};
use crate::error::{Error, Result};
use crate::safety::RawAction;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub policy_coef: f64,
    pub value_coef: f64,
    pub reward_coef: f64,
    pub consistency_coef: f64,
    pub entropy_coef: f64,
    /// Gradient multiplier on the hidden state entering the dynamics.
    pub dynamics_grad_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            policy_coef: 1.0,
            value_coef: 0.5,
            reward_coef: 1.0,
            consistency_coef: 2.0,
            entropy_coef: 0.01,
            dynamics_grad_scale: 0.5,
        }
    }
}

/// Targets for one state of an unroll.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollStep {
    /// Encoded action leading into this state (ignored for the first state).
    pub action: Vec<f64>,
    pub reward_target: f64,
    pub value_target: f64,
    /// Root visit distribution and its candidates, when searched.
    pub policy_target: Option<(Vec<f64>, Vec<RawAction>)>,
    /// Real observation at this state for the consistency loss.
    pub observation: Option<Vec<f64>>,
    /// Frozen projection of `h(observation)`; computed on demand when absent.
    pub consistency_target: Option<Vec<f64>>,
    /// Past the end of the episode: no loss at all.
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrollSample {
    pub observation: Vec<f64>,
    pub steps: Vec<UnrollStep>,
    /// Importance weight.
    pub weight: f64,
}

/// Unweighted loss components summed over unroll steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub reward: f64,
    pub consistency: f64,
    pub entropy: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.policy += o.policy;
        self.value += o.value;
        self.reward += o.reward;
        self.consistency += o.consistency;
        self.entropy += o.entropy;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.policy *= s;
        self.value *= s;
        self.reward *= s;
        self.consistency *= s;
        self.entropy *= s;
    }

    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.policy,
            self.value,
            self.reward,
            self.consistency,
            self.entropy,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Discrete target `Σ_i π_i · onehot_i`.
pub fn aggregate_one_hots(pi: &[f64], hots: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for (w, h) in pi.iter().zip(hots) {
        if acc.is_empty() {
            acc = vec![0.0; h.len()];
        }
        for (a, v) in acc.iter_mut().zip(h) {
            *a += w * v;
        }
    }
    acc
}

/// Loss and parameter gradient for a single sample.
///
/// Returns the weighted loss parts, the gradient (already multiplied by the
/// sample weight) and the initial value prediction.
pub fn loss_and_grads<T: Real>(
    model: &Model<T>,
    sample: &UnrollSample,
    cfg: &LossConfig,
) -> Result<(LossParts, ParamSet<T>, f64)> {
    let mut grads = model.params.zeros_like();
    let (parts, v0) = accumulate(model, sample, cfg, &mut grads)?;
    Ok((parts, grads, v0))
}

fn accumulate<T: Real>(
    model: &Model<T>,
    sample: &UnrollSample,
    cfg: &LossConfig,
    grads: &mut ParamSet<T>,
) -> Result<(LossParts, f64)> {
    evaluate(model, sample, cfg, Some(grads)).map(|(p, v0, _)| (p, v0))
}

/// Loss of one sample without gradients, plus the distance of the
/// evaluation point from the nearest non-smooth point of the graph.
pub fn loss_value<T: Real>(
    model: &Model<T>,
    sample: &UnrollSample,
    cfg: &LossConfig,
) -> Result<(LossParts, f64)> {
    evaluate(model, sample, cfg, None).map(|(p, _, m)| (p, m))
}

fn evaluate<T: Real>(
    model: &Model<T>,
    sample: &UnrollSample,
    cfg: &LossConfig,
    grads: Option<&mut ParamSet<T>>,
) -> Result<(LossParts, f64, f64)> {
    let lit = T::lit;
    let mut tape = Tape::new(&model.params);
    let mut terms: Vec<(Var, T)> = Vec::new();
    let mut parts = LossParts::default();
    let w = sample.weight;
    let mut hidden = model.represent_tape(&mut tape, &sample.observation);
    let mut v0 = 0.0;

    for (k, step) in sample.steps.iter().enumerate() {
        if step.masked {
            break;
        }
        if k > 0 {
            let (next, r) = model.dynamics_tape(
                &mut tape,
                hidden,
                &step.action,
                lit(cfg.dynamics_grad_scale),
            );
            hidden = next;
            let lr = tape.sq_err(r, lit(step.reward_target));
            parts.reward += tape.scalar(lr).as_f64();
            terms.push((lr, lit(w * cfg.reward_coef)));

            let target = match (&step.consistency_target, &step.observation) {
                (Some(t), _) => Some(t.iter().map(|v| lit(*v)).collect::<Vec<T>>()),
                (None, Some(o)) => Some(model.project(&model.represent(o)?)),
                (None, None) => None,
            };
            if let Some(t) = target {
                let p = model.project_tape(&mut tape, hidden);
                let lc = tape.cosine_loss(p, t);
                parts.consistency += tape.scalar(lc).as_f64();
                terms.push((lc, lit(w * cfg.consistency_coef)));
            }
        }
        let pred = model.predict_tape(&mut tape, hidden);
        if k == 0 {
            v0 = tape.scalar(pred.value).as_f64();
        }
        let lv = tape.sq_err(pred.value, lit(step.value_target));
        parts.value += tape.scalar(lv).as_f64();
        terms.push((lv, lit(w * cfg.value_coef)));

        if let Some((pi, cands)) = &step.policy_target {
            let targets: Vec<(T, Vec<T>)> = pi
                .iter()
                .zip(cands)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, c)| {
                    (
                        lit(*p),
                        c.a_p.iter().map(|a| lit(squash_clip(*a))).collect(),
                    )
                })
                .collect();
            let lpc = tape.squashed_nll(pred.mu, pred.logstd, &targets);
            let t_o = aggregate_one_hots(pi, cands.iter().map(|c| c.a_o.clone()));
            let t_c = aggregate_one_hots(pi, cands.iter().map(|c| c.a_c.clone()));
            let lo = tape.softmax_xent(pred.startup, t_o.iter().map(|v| lit(*v)).collect());
            let lcs = tape.softmax_xent(pred.shutdown, t_c.iter().map(|v| lit(*v)).collect());
            for l in [lpc, lo, lcs] {
                parts.policy += tape.scalar(l).as_f64();
                terms.push((l, lit(w * cfg.policy_coef)));
            }
        }
        if cfg.entropy_coef != 0.0 {
            let hg = tape.gauss_entropy(pred.logstd);
            let ho = tape.cat_entropy(pred.startup);
            let hc = tape.cat_entropy(pred.shutdown);
            for h in [hg, ho, hc] {
                parts.entropy += tape.scalar(h).as_f64();
                terms.push((h, lit(-w * cfg.entropy_coef)));
            }
        }
    }

    let total = tape.weighted_sum(terms);
    parts.total = tape.scalar(total).as_f64();
    if !parts.is_finite() {
        return Err(Error::Training(format!("non-finite loss {parts:?}")));
    }
    if let Some(g) = grads {
        tape.backward_into(total, g);
    }
    Ok((parts, v0, tape.kink_margin().as_f64()))
}

type BatchGrads<T> = (LossParts, ParamSet<T>, Vec<f64>);

/// Mean loss and gradient over a batch.
///
/// Samples are processed in fixed chunks whose partial sums are combined in
/// order, so the result does not depend on the number of threads.
pub fn batch_loss_and_grads<T: Real>(
    model: &Model<T>,
    batch: &[UnrollSample],
    cfg: &LossConfig,
    chunk: usize,
) -> Result<BatchGrads<T>> {
    assert!(!batch.is_empty(), "empty batch");
    let chunk = chunk.max(1);
    let partial: Vec<Result<BatchGrads<T>>> = batch
        .par_chunks(chunk)
        .map(|samples| {
            let mut g = model.params.zeros_like();
            let mut parts = LossParts::default();
            let mut v0 = Vec::with_capacity(samples.len());
            for s in samples {
                let (p, v) = accumulate(model, s, cfg, &mut g)?;
                parts.add(&p);
                v0.push(v);
            }
            Ok((parts, g, v0))
        })
        .collect();
    let mut parts = LossParts::default();
    let mut grads = model.params.zeros_like();
    let mut v0 = Vec::with_capacity(batch.len());
    for r in partial {
        let (p, g, v) = r?;
        parts.add(&p);
        grads.axpy(T::one(), &g);
        v0.extend(v);
    }
    let inv = 1.0 / batch.len() as f64;
    parts.scale(inv);
    grads.scale(T::lit(inv));
    Ok((parts, grads, v0))
}
