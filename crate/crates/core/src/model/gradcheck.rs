//! Finite-difference check of the analytic loss gradient on small random
//! models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{loss_and_grads, loss_value};
use super::{LossConfig, Model, ModelConfig, ModelShape, UnrollSample, UnrollStep};
use crate::error::Result;
use crate::safety::RawAction;

/// Central-difference step.
pub const FD_EPS: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-3;
/// Minimum distance from any kink for a configuration to be checked.
pub const MIN_KINK_MARGIN: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    pub n_params: usize,
    pub unroll: usize,
    pub max_rel_error: f64,
    /// Tensor holding the worst entry.
    pub worst_tensor: String,
    /// Seeds skipped because the loss sat too close to a kink.
    pub rejected: usize,
}

fn random_action(n: usize, rng: &mut ChaCha8Rng) -> RawAction {
    let a_p = (0..n).map(|_| rng.random_range(-0.9..0.9)).collect();
    RawAction::new(a_p, rng.random_range(0..=n), rng.random_range(0..=n))
}

fn toy_problem(seed: u64) -> (Model<f64>, UnrollSample, LossConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = |rng: &mut ChaCha8Rng| rng.random_range(3..=7);
    let shape = ModelShape {
        obs_dim: rng.random_range(4..=7),
        n_ctrl: 2,
    };
    let cfg = ModelConfig {
        hidden: w(&mut rng),
        repr_widths: vec![w(&mut rng)],
        dyn_widths: vec![w(&mut rng)],
        reward_widths: vec![w(&mut rng)],
        pred_widths: vec![w(&mut rng)],
        proj_widths: vec![w(&mut rng), w(&mut rng)],
        ..ModelConfig::default()
    };
    let mut model = Model::<f64>::new(&cfg, shape, rng.random());
    for t in model
        .params
        .tensors
        .iter_mut()
        .filter(|t| t.name.ends_with(".b"))
    {
        t.data
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    for _ in 0..5 {
        let o: Vec<f64> = (0..shape.obs_dim)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        model.norm.update(&o);
    }
    let obs = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..shape.obs_dim)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect()
    };
    let unroll = rng.random_range(2..=3);
    let proj_dim = *cfg.proj_widths.last().expect("non-empty");
    let mut steps = Vec::new();
    for k in 0..=unroll {
        let cands: Vec<RawAction> = (0..3).map(|_| random_action(2, &mut rng)).collect();
        let mut pi: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        steps.push(UnrollStep {
            action: random_action(2, &mut rng).encode(),
            reward_target: rng.random_range(-1.0..1.0),
            value_target: rng.random_range(-2.0..2.0),
            policy_target: Some((pi, cands)),
            observation: Some(obs(&mut rng)),
            consistency_target: (k > 0)
                .then(|| (0..proj_dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
            masked: k == unroll && rng.random_bool(0.5),
        });
    }
    let sample = UnrollSample {
        observation: obs(&mut rng),
        steps,
        weight: rng.random_range(0.5..1.5),
    };
    let loss = LossConfig {
        entropy_coef: 0.05,
        dynamics_grad_scale: 1.0,
        ..LossConfig::default()
    };
    (model, sample, loss)
}

/// Compare every analytic parameter gradient with a central difference.
///
/// Seeds whose loss lies within [`MIN_KINK_MARGIN`] of a ReLU, clamp or
/// min-max kink are skipped in favour of the next seed.
pub fn check_gradients(seed: u64) -> Result<GradCheckReport> {
    let mut rejected = 0;
    let mut s = seed;
    let (model, sample, cfg) = loop {
        let (m, smp, c) = toy_problem(s);
        let (_, margin) = loss_value(&m, &smp, &c)?;
        if margin > MIN_KINK_MARGIN {
            break (m, smp, c);
        }
        rejected += 1;
        s = s.wrapping_add(0x9E37_79B9);
    };
    let (_, grads, _) = loss_and_grads(&model, &sample, &cfg)?;
    let mut worst = (0.0, String::new());
    let mut probe = model.clone();
    for (ti, t) in model.params.tensors.iter().enumerate() {
        for (j, &p0) in t.data.iter().enumerate() {
            probe.params.tensors[ti].data[j] = p0 + FD_EPS;
            let up = loss_value(&probe, &sample, &cfg)?.0.total;
            probe.params.tensors[ti].data[j] = p0 - FD_EPS;
            let down = loss_value(&probe, &sample, &cfg)?.0.total;
            probe.params.tensors[ti].data[j] = p0;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let analytic = grads.tensors[ti].data[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > worst.0 {
                worst = (rel, t.name.clone());
            }
        }
    }
    Ok(GradCheckReport {
        seed: s,
        n_params: model.params.n_values(),
        unroll: sample.steps.len() - 1,
        max_rel_error: worst.0,
        worst_tensor: worst.1,
        rejected,
    })
}
