//! Self-play, prioritized replay, reanalyze and the learner loop.
//!
//! Actors and the learner run in lockstep phases: a round of self-play
//! episodes (parallel over episodes) every `selfplay_interval` learner steps,
//! then learner steps whose batch targets are built in parallel. Every random
//! draw comes from a stream derived from the run seed, so a run is
//! reproducible bit for bit regardless of the thread count.

mod replay;
mod selfplay;
mod targets;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use replay::{ReplayBuffer, SampledPosition, SumTree};
pub use selfplay::{last_start, play_episode, EpisodeSpec};
pub use targets::{make_sample, value_target, PolicyTarget, TargetConfig, Trajectory};

use crate::env::{observation_dim, EnvConfig, TimeSeries};
use crate::error::{Error, Result};
use crate::grid::GridCase;
use crate::model::{
    batch_loss_and_grads, save_checkpoint, Checkpoint, LossConfig, Model, ModelConfig, ModelShape,
    Sgd, SgdConfig, UnrollSample,
};
use crate::planner::{
    search_with_candidates, summarize, temperature_at, PlannerConfig, SearchModel, SelectMode,
};
use crate::seed::derive_seed;

const STREAM_SELFPLAY: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_REANALYZE: u64 = 3;
const STREAM_INIT: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub targets: TargetConfig,
    pub buffer_capacity: usize,
    pub warmup_trajectories: usize,
    pub priority_alpha: f64,
    pub priority_beta: f64,
    /// Fraction of each batch whose policy targets are recomputed by search.
    pub reanalyze_ratio: f64,
    pub target_interval: usize,
    pub selfplay_interval: usize,
    /// Episodes per self-play round.
    pub episodes_per_round: usize,
    /// Samples per gradient chunk.
    pub grad_chunk: usize,
    pub checkpoint_interval: usize,
    pub max_nonfinite: usize,
    pub sgd: SgdConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 5000,
            batch_size: 256,
            targets: TargetConfig::default(),
            buffer_capacity: 500,
            warmup_trajectories: 20,
            priority_alpha: 0.6,
            priority_beta: 0.4,
            reanalyze_ratio: 1.0,
            target_interval: 200,
            selfplay_interval: 100,
            episodes_per_round: 1,
            grad_chunk: 8,
            checkpoint_interval: 1000,
            max_nonfinite: 10,
            sgd: SgdConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("training.{m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.buffer_capacity == 0 || self.warmup_trajectories == 0 {
            return bad("buffer_capacity and warmup_trajectories must be positive");
        }
        if self.warmup_trajectories > self.buffer_capacity {
            return bad("warmup_trajectories exceeds buffer_capacity");
        }
        if !(0.0..=1.0).contains(&self.reanalyze_ratio) {
            return bad("reanalyze_ratio must lie in [0, 1]");
        }
        if self.target_interval == 0 || self.selfplay_interval == 0 {
            return bad("target_interval and selfplay_interval must be positive");
        }
        if self.episodes_per_round == 0 {
            return bad("episodes_per_round must be positive");
        }
        if self.targets.unroll_steps == 0 {
            return bad("targets.unroll_steps must be positive");
        }
        if !(self.priority_alpha > 0.0) || !(0.0..=1.0).contains(&self.priority_beta) {
            return bad("priority exponents out of range");
        }
        Ok(())
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub case: Arc<GridCase>,
    pub series: Arc<TimeSeries>,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub planner: PlannerConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Configuration echo stored in checkpoints.
    pub echo: serde_json::Value,
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub loss_reward: f64,
    pub loss_consistency: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub skipped: bool,
    pub buffer_trajectories: usize,
    pub buffer_positions: usize,
    pub env_steps: usize,
    pub episodes: usize,
    pub recent_episode_reward: f64,
    pub snapshot_step: usize,
    pub target_step: usize,
}

/// Summary of one self-play episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub index: usize,
    pub learner_step: usize,
    pub snapshot_step: usize,
    pub seed: u64,
    pub start: usize,
    pub length: usize,
    pub total_reward: f64,
    pub termination: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub metrics: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeSummary>,
    pub env_steps: usize,
}

pub fn model_shape(case: &GridCase) -> ModelShape {
    ModelShape {
        obs_dim: observation_dim(case),
        n_ctrl: case.controllable_ids().len(),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Trainer<'a> {
    setup: &'a TrainSetup,
    out: Option<PathBuf>,
    model: Model<f32>,
    target: Model<f32>,
    snapshot: Model<f32>,
    snapshot_step: usize,
    target_step: usize,
    opt: Sgd<f32>,
    buffer: ReplayBuffer,
    episodes: Vec<EpisodeSummary>,
    env_steps: usize,
    recent_reward: f64,
}

impl Trainer<'_> {
    fn self_play_round(&mut self, step: usize, update_norm: bool) -> Result<()> {
        let s = self.setup;
        assert!(
            step - self.snapshot_step <= s.train.selfplay_interval,
            "self-play snapshot is stale"
        );
        let first = self.episodes.len();
        let specs: Vec<EpisodeSpec> = (0..s.train.episodes_per_round)
            .map(|i| EpisodeSpec {
                case: s.case.clone(),
                series: s.series.clone(),
                env: s.env.clone(),
                planner: s.planner.clone(),
                mode: SelectMode::Train,
                temperature: temperature_at(step, s.train.total_steps),
                seed: derive_seed(s.seed, STREAM_SELFPLAY, (first + i) as u64),
                start: None,
            })
            .collect();
        let snapshot = &self.snapshot;
        let played: Vec<Result<Trajectory>> = specs
            .par_iter()
            .map(|spec| play_episode(snapshot, spec).map(|(t, _)| t))
            .collect();
        let mut total = 0.0;
        for (i, r) in played.into_iter().enumerate() {
            let traj = r?;
            if traj.is_empty() {
                continue;
            }
            if update_norm {
                for o in &traj.observations {
                    self.model.norm.update(o);
                }
            }
            self.env_steps += traj.len();
            total += traj.total_reward();
            self.episodes.push(EpisodeSummary {
                index: first + i,
                learner_step: step,
                snapshot_step: self.snapshot_step,
                seed: traj.seed,
                start: traj.start,
                length: traj.len(),
                total_reward: traj.total_reward(),
                termination: traj
                    .termination
                    .map_or_else(|| "none".to_string(), |t| t.to_string()),
            });
            self.buffer.push(Arc::new(traj));
        }
        self.recent_reward = total / s.train.episodes_per_round as f64;
        Ok(())
    }

    fn build_batch(
        &self,
        step: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<SampledPosition>, Vec<UnrollSample>) {
        let s = self.setup;
        let sampled = self
            .buffer
            .sample(s.train.batch_size, s.train.priority_beta, rng);
        let n_re = (s.train.reanalyze_ratio * s.train.batch_size as f64).round() as usize;
        let target = &self.target;
        let samples = sampled
            .par_iter()
            .enumerate()
            .map(|(i, sp)| {
                let traj = &sp.trajectory;
                let mut search_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    s.seed,
                    STREAM_REANALYZE,
                    (step * s.train.batch_size + i) as u64,
                ));
                let mut policy = |j: usize| -> PolicyTarget {
                    if i < n_re {
                        let tree = search_with_candidates(
                            target,
                            &traj.observations[j],
                            &traj.candidates[j],
                            &s.planner,
                            &mut search_rng,
                        )
                        .expect("stored observations have the model width");
                        (summarize(&tree, Vec::new()).pi, traj.candidates[j].clone())
                    } else {
                        (traj.policies[j].clone(), traj.candidates[j].clone())
                    }
                };
                let mut bootstrap = |j: usize| {
                    target
                        .initial(&traj.observations[j])
                        .expect("stored observations have the model width")
                        .value
                };
                make_sample(
                    traj,
                    sp.position,
                    sp.weight,
                    &s.train.targets,
                    &mut policy,
                    &mut bootstrap,
                )
            })
            .collect();
        (sampled, samples)
    }

    fn checkpoint(&self, name: &str, step: usize) -> Result<()> {
        if let Some(dir) = &self.out {
            let ck = Checkpoint {
                model: self.model.clone(),
                step: step as u64,
                echo: self.setup.echo.clone(),
            };
            save_checkpoint(dir.join(name), &ck)?;
        }
        Ok(())
    }
}

/// Run the full training loop. With `out` set, writes `metrics.csv`,
/// `episodes.csv`, periodic checkpoints and `model.ckpt`.
pub fn train(setup: &TrainSetup, out: Option<&Path>) -> Result<TrainOutcome> {
    let cfg = &setup.train;
    cfg.validate()?;
    setup.env.validate()?;
    setup.model.validate()?;
    setup.planner.validate()?;
    setup.series.validate(&setup.case)?;
    last_start(&setup.series, &setup.env)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let model = Model::<f32>::new(
        &setup.model,
        model_shape(&setup.case),
        derive_seed(setup.seed, STREAM_INIT, 0),
    );
    let mut t = Trainer {
        setup,
        out: out.map(Path::to_path_buf),
        target: model.clone(),
        snapshot: model.clone(),
        opt: Sgd::new(cfg.sgd.clone(), &model.params),
        model,
        snapshot_step: 0,
        target_step: 0,
        buffer: ReplayBuffer::new(
            cfg.buffer_capacity,
            setup.env.episode_len,
            cfg.priority_alpha,
        ),
        episodes: Vec::new(),
        env_steps: 0,
        recent_reward: 0.0,
    };
    while t.buffer.len() < cfg.warmup_trajectories {
        t.self_play_round(0, true)?;
    }
    t.snapshot = t.model.clone();
    t.target = t.model.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(setup.seed, STREAM_SAMPLE, 0));
    let mut metrics = Vec::with_capacity(cfg.total_steps);
    let mut bad_run = 0;
    for step in 0..cfg.total_steps {
        if step > 0 && step % cfg.target_interval == 0 {
            t.target = t.model.clone();
            t.target_step = step;
        }
        if step > 0 && step % cfg.selfplay_interval == 0 {
            t.snapshot = t.model.clone();
            t.snapshot_step = step;
            t.self_play_round(step, false)?;
        }
        let (sampled, batch) = t.build_batch(step, &mut rng);
        let lr = cfg.sgd.lr_at(step, cfg.total_steps);
        let mut row = MetricsRow {
            step,
            lr,
            loss_total: f64::NAN,
            loss_policy: f64::NAN,
            loss_value: f64::NAN,
            loss_reward: f64::NAN,
            loss_consistency: f64::NAN,
            entropy: f64::NAN,
            grad_norm: f64::NAN,
            skipped: true,
            buffer_trajectories: t.buffer.len(),
            buffer_positions: t.buffer.positions(),
            env_steps: t.env_steps,
            episodes: t.episodes.len(),
            recent_episode_reward: t.recent_reward,
            snapshot_step: t.snapshot_step,
            target_step: t.target_step,
        };
        match batch_loss_and_grads(&t.model, &batch, &cfg.loss, cfg.grad_chunk) {
            Ok((parts, mut grads, v0)) if grads.all_finite() => {
                bad_run = 0;
                row.grad_norm = t.opt.step(&mut t.model.params, &mut grads, lr);
                row.skipped = false;
                row.loss_total = parts.total;
                row.loss_policy = parts.policy;
                row.loss_value = parts.value;
                row.loss_reward = parts.reward;
                row.loss_consistency = parts.consistency;
                row.entropy = parts.entropy;
                for ((sp, sample), v) in sampled.iter().zip(&batch).zip(v0) {
                    let z0 = sample.steps[0].value_target;
                    t.buffer
                        .update_priority(sp.slot, sp.position, (z0 - v).abs() + 1e-6);
                }
            }
            Ok(_) | Err(Error::Training(_)) => {
                bad_run += 1;
                if bad_run >= cfg.max_nonfinite {
                    return Err(Error::Training(format!(
                        "{bad_run} consecutive non-finite batches at step {step}"
                    )));
                }
            }
            Err(e) => return Err(e),
        }
        metrics.push(row);
        if cfg.checkpoint_interval > 0 && step > 0 && step % cfg.checkpoint_interval == 0 {
            t.checkpoint(&format!("checkpoint_{step:06}.ckpt"), step)?;
        }
    }
    t.checkpoint("model.ckpt", cfg.total_steps)?;
    if let Some(dir) = out {
        write_csv(&dir.join("metrics.csv"), &metrics)?;
        write_csv(&dir.join("episodes.csv"), &t.episodes)?;
    }
    Ok(TrainOutcome {
        model: t.model,
        metrics,
        episodes: t.episodes,
        env_steps: t.env_steps,
    })
}
