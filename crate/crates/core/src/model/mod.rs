//! Learned model: representation `h`, dynamics `g`, prediction `f` and the
//! projection used by the consistency loss.

mod checkpoint;
mod dist;
pub mod gradcheck;
mod loss;
mod norm;
mod optim;
pub mod params;
pub mod tape;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use dist::{
    categorical_entropy, gaussian_entropy, log_prob, masked_probs, sample_candidates, softmax,
    squash_clip, NoiseCounts, RootNoise, SQUASH_LIMIT,
};
pub use loss::{
    aggregate_one_hots, batch_loss_and_grads, loss_and_grads, loss_value, LossConfig, LossParts,
    UnrollSample, UnrollStep,
};
pub use norm::RunningNorm;
pub use optim::{clip_grad_norm, Sgd, SgdConfig};
pub use params::{ParamSet, Tensor};

use params::{dense, linear, min_max};
use tape::{Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden-state width `H`.
    pub hidden: usize,
    pub repr_widths: Vec<usize>,
    pub dyn_widths: Vec<usize>,
    pub reward_widths: Vec<usize>,
    pub pred_widths: Vec<usize>,
    pub proj_widths: Vec<usize>,
    pub logstd_min: f64,
    pub logstd_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            repr_widths: vec![256, 256],
            dyn_widths: vec![256],
            reward_widths: vec![64],
            pred_widths: vec![256],
            proj_widths: vec![64, 64],
            logstd_min: -5.0,
            logstd_max: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("model.hidden must be positive".into()));
        }
        if self.proj_widths.is_empty() {
            return Err(Error::Config("model.proj_widths must not be empty".into()));
        }
        if !(self.logstd_min < self.logstd_max) {
            return Err(Error::Config(
                "model.logstd_min must be below logstd_max".into(),
            ));
        }
        Ok(())
    }
}

/// Input and output sizes fixed by the grid case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub obs_dim: usize,
    /// Controllable units `n`.
    pub n_ctrl: usize,
}

impl ModelShape {
    /// Width of the `[a_p | a_o | a_c]` action encoding.
    pub fn action_dim(&self) -> usize {
        3 * self.n_ctrl + 2
    }

    pub fn head_dim(&self) -> usize {
        4 * self.n_ctrl + 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput<T> {
    pub mu: Vec<T>,
    pub logstd: Vec<T>,
    pub startup_logits: Vec<T>,
    pub shutdown_logits: Vec<T>,
}

impl<T: Real> PolicyOutput<T> {
    pub fn to_f64(&self) -> PolicyOutput<f64> {
        let c = |v: &[T]| v.iter().map(|x| x.as_f64()).collect();
        PolicyOutput {
            mu: c(&self.mu),
            logstd: c(&self.logstd),
            startup_logits: c(&self.startup_logits),
            shutdown_logits: c(&self.shutdown_logits),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput<T> {
    pub value: T,
    pub reward: T,
    pub policy: PolicyOutput<T>,
    pub hidden: Vec<T>,
}

type Layers = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq)]
struct Nets {
    repr: Layers,
    dynamics: Layers,
    reward: Layers,
    pred: Layers,
    proj: Layers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub shape: ModelShape,
    pub params: ParamSet<T>,
    pub norm: RunningNorm,
    nets: Nets,
}

fn build_mlp<T: Real>(
    ps: &mut ParamSet<T>,
    name: &str,
    inp: usize,
    widths: &[usize],
    out: usize,
    rng: &mut ChaCha8Rng,
) -> Layers {
    let mut layers = Vec::new();
    let mut prev = inp;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(dense(ps, &format!("{name}.{i}"), prev, w, 1.0, rng));
        prev = w;
    }
    layers.push(dense(
        ps,
        &format!("{name}.{}", widths.len()),
        prev,
        out,
        0.5,
        rng,
    ));
    layers
}

fn mlp<T: Real>(ps: &ParamSet<T>, layers: &Layers, x: &[T]) -> Vec<T> {
    let mut h = x.to_vec();
    for (k, (w, b)) in layers.iter().enumerate() {
        h = linear(&ps.get(*w).data, &ps.get(*b).data, &h);
        if k + 1 < layers.len() {
            h.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
    }
    h
}

fn mlp_tape<T: Real>(tape: &mut Tape<'_, T>, layers: &Layers, x: Var) -> Var {
    let mut h = x;
    for (k, (w, b)) in layers.iter().enumerate() {
        h = tape.linear(h, *w, *b);
        if k + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    h
}

/// Policy and value nodes produced on a tape.
pub(crate) struct PredVars {
    pub mu: Var,
    pub logstd: Var,
    pub startup: Var,
    pub shutdown: Var,
    pub value: Var,
}

impl<T: Real> Model<T> {
    pub fn new(config: &ModelConfig, shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::default();
        let h = config.hidden;
        let nets = Nets {
            repr: build_mlp(
                &mut ps,
                "repr",
                shape.obs_dim,
                &config.repr_widths,
                h,
                &mut rng,
            ),
            dynamics: build_mlp(
                &mut ps,
                "dyn",
                h + shape.action_dim(),
                &config.dyn_widths,
                h,
                &mut rng,
            ),
            reward: build_mlp(&mut ps, "reward", h, &config.reward_widths, 1, &mut rng),
            pred: build_mlp(
                &mut ps,
                "pred",
                h,
                &config.pred_widths,
                shape.head_dim(),
                &mut rng,
            ),
            proj: {
                let (last, rest) = config.proj_widths.split_last().expect("validated");
                build_mlp(&mut ps, "proj", h, rest, *last, &mut rng)
            },
        };
        Model {
            config: config.clone(),
            shape,
            params: ps,
            norm: RunningNorm::new(shape.obs_dim),
            nets,
        }
    }

    /// Same architecture with `params` swapped in (shapes must match).
    pub fn with_params<U: Real>(&self, params: ParamSet<U>) -> Model<U> {
        Model {
            config: self.config.clone(),
            shape: self.shape,
            params,
            norm: self.norm.clone(),
            nets: self.nets.clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        self.with_params(self.params.cast())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.shape.obs_dim {
            return Err(Error::Dimension {
                what: "observation",
                expected: self.shape.obs_dim,
                got: obs.len(),
            });
        }
        Ok(())
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<T> {
        self.norm.apply(obs).into_iter().map(T::lit).collect()
    }

    /// `h`: observation to min-max normalized hidden state.
    pub fn represent(&self, obs: &[f64]) -> Result<Vec<T>> {
        self.check_obs(obs)?;
        Ok(min_max(&mlp(
            &self.params,
            &self.nets.repr,
            &self.normalize(obs),
        )))
    }

    /// `g`: next hidden state and predicted reward.
    pub fn dynamics(&self, hidden: &[T], action: &[f64]) -> (Vec<T>, T) {
        assert_eq!(
            action.len(),
            self.shape.action_dim(),
            "action encoding width"
        );
        let mut x = hidden.to_vec();
        x.extend(action.iter().map(|a| T::lit(*a)));
        let next = min_max(&mlp(&self.params, &self.nets.dynamics, &x));
        let r = mlp(&self.params, &self.nets.reward, &next)[0];
        (next, r)
    }

    /// `f`: policy heads and value.
    pub fn predict(&self, hidden: &[T]) -> (PolicyOutput<T>, T) {
        let out = mlp(&self.params, &self.nets.pred, hidden);
        let n = self.shape.n_ctrl;
        let (lo, hi) = (
            T::lit(self.config.logstd_min),
            T::lit(self.config.logstd_max),
        );
        let policy = PolicyOutput {
            mu: out[..n].to_vec(),
            logstd: out[n..2 * n].iter().map(|v| v.max(lo).min(hi)).collect(),
            startup_logits: out[2 * n..3 * n + 1].to_vec(),
            shutdown_logits: out[3 * n + 1..4 * n + 2].to_vec(),
        };
        (policy, out[4 * n + 2])
    }

    pub fn project(&self, hidden: &[T]) -> Vec<T> {
        mlp(&self.params, &self.nets.proj, hidden)
    }

    pub fn initial_inference(&self, obs: &[f64]) -> Result<ModelOutput<T>> {
        let hidden = self.represent(obs)?;
        let (policy, value) = self.predict(&hidden);
        Ok(ModelOutput {
            value,
            reward: T::zero(),
            policy,
            hidden,
        })
    }

    pub fn recurrent_inference(&self, hidden: &[T], action: &[f64]) -> ModelOutput<T> {
        let (next, reward) = self.dynamics(hidden, action);
        let (policy, value) = self.predict(&next);
        ModelOutput {
            value,
            reward,
            policy,
            hidden: next,
        }
    }

    pub(crate) fn represent_tape(&self, tape: &mut Tape<'_, T>, obs: &[f64]) -> Var {
        let x = tape.input(self.normalize(obs));
        let h = mlp_tape(tape, &self.nets.repr, x);
        tape.min_max(h)
    }

    pub(crate) fn dynamics_tape(
        &self,
        tape: &mut Tape<'_, T>,
        hidden: Var,
        action: &[f64],
        grad_scale: T,
    ) -> (Var, Var) {
        let h = tape.grad_scale(hidden, grad_scale);
        let a = tape.input(action.iter().map(|v| T::lit(*v)).collect());
        let x = tape.concat(h, a);
        let y = mlp_tape(tape, &self.nets.dynamics, x);
        let next = tape.min_max(y);
        let r = mlp_tape(tape, &self.nets.reward, next);
        (next, r)
    }

    pub(crate) fn predict_tape(&self, tape: &mut Tape<'_, T>, hidden: Var) -> PredVars {
        let out = mlp_tape(tape, &self.nets.pred, hidden);
        let n = self.shape.n_ctrl;
        let raw_ls = tape.slice(out, n, n);
        let (lo, hi) = (
            T::lit(self.config.logstd_min),
            T::lit(self.config.logstd_max),
        );
        PredVars {
            mu: tape.slice(out, 0, n),
            logstd: tape.clamp(raw_ls, lo, hi),
            startup: tape.slice(out, 2 * n, n + 1),
            shutdown: tape.slice(out, 3 * n + 1, n + 1),
            value: tape.slice(out, 4 * n + 2, 1),
        }
    }

    pub(crate) fn project_tape(&self, tape: &mut Tape<'_, T>, hidden: Var) -> Var {
        mlp_tape(tape, &self.nets.proj, hidden)
    }
}
