//! Hybrid action distribution: tanh-squashed diagonal Gaussian plus two
//! categorical switch heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::log_prob_pre;
use super::PolicyOutput;
use crate::safety::RawAction;
use crate::scalar::Real;

/// Largest magnitude of a squashed sample fed to `atanh`.
pub const SQUASH_LIMIT: f64 = 1.0 - 1e-6;

pub fn squash_clip(a: f64) -> f64 {
    a.clamp(-SQUASH_LIMIT, SQUASH_LIMIT)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax restricted to the `true` slots of `mask`.
pub fn masked_probs(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let Some(mask) = mask else {
        return softmax(logits);
    };
    let z: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { *l } else { f64::NEG_INFINITY })
        .collect();
    softmax(&z)
}

/// Log-density of a squashed action `a_p` under `policy`.
pub fn log_prob<T: Real>(policy: &PolicyOutput<T>, a_p: &[f64]) -> f64 {
    let mu: Vec<f64> = policy.mu.iter().map(|v| v.as_f64()).collect();
    let ls: Vec<f64> = policy.logstd.iter().map(|v| v.as_f64()).collect();
    let a: Vec<f64> = a_p.iter().map(|v| squash_clip(*v)).collect();
    let u: Vec<f64> = a.iter().map(|v| v.atanh()).collect();
    log_prob_pre(&mu, &ls, &u, &a)
}

/// Entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(logstd: &[f64]) -> f64 {
    let c = 0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln();
    logstd.iter().map(|l| l + c).sum()
}

pub fn categorical_entropy(logits: &[f64]) -> f64 {
    -softmax(logits)
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Candidate counts per sampling mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseCounts {
    /// Plain policy samples.
    pub normal: usize,
    /// Policy samples with extra unit Gaussian noise before squashing.
    pub bigger: usize,
    /// Samples with the standard deviation multiplied by `flatten`.
    pub smaller: usize,
    pub flatten: f64,
}

impl Default for NoiseCounts {
    fn default() -> Self {
        NoiseCounts {
            normal: 13,
            bigger: 2,
            smaller: 2,
            flatten: 2.0,
        }
    }
}

impl NoiseCounts {
    pub fn total(&self) -> usize {
        self.normal + self.bigger + self.smaller
    }

    /// Only plain samples (used below the root).
    pub fn plain(&self) -> Self {
        NoiseCounts {
            normal: self.total(),
            bigger: 0,
            smaller: 0,
            flatten: self.flatten,
        }
    }
}

/// Root-only perturbation of the switch heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RootNoise {
    pub dirichlet_alpha: f64,
    pub fraction: f64,
    pub startup_mask: Vec<bool>,
    pub shutdown_mask: Vec<bool>,
}

fn dirichlet_mix(p: &mut [f64], mask: &[bool], alpha: f64, frac: f64, rng: &mut ChaCha8Rng) {
    if frac <= 0.0 {
        return;
    }
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let draws: Vec<f64> = mask
        .iter()
        .map(|m| if *m { gamma.sample(rng) } else { 0.0 })
        .collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        return;
    }
    for (pi, d) in p.iter_mut().zip(draws) {
        *pi = (1.0 - frac) * *pi + frac * d / total;
    }
}

fn sample_index(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, pi) in p.iter().enumerate() {
        if *pi <= 0.0 {
            continue;
        }
        last = i;
        acc += pi;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draw `counts.total()` hybrid candidates from `policy`.
///
/// With `root` set, Dirichlet noise is mixed into the switch probabilities
/// and ineligible switch slots are masked out before sampling.
pub fn sample_candidates(
    policy: &PolicyOutput<f64>,
    counts: &NoiseCounts,
    root: Option<&RootNoise>,
    rng: &mut ChaCha8Rng,
) -> Vec<RawAction> {
    let n = policy.mu.len();
    let mut p_o = masked_probs(&policy.startup_logits, root.map(|r| &r.startup_mask[..]));
    let mut p_c = masked_probs(&policy.shutdown_logits, root.map(|r| &r.shutdown_mask[..]));
    if let Some(r) = root {
        dirichlet_mix(
            &mut p_o,
            &r.startup_mask,
            r.dirichlet_alpha,
            r.fraction,
            rng,
        );
        dirichlet_mix(
            &mut p_c,
            &r.shutdown_mask,
            r.dirichlet_alpha,
            r.fraction,
            rng,
        );
    }
    let sigma: Vec<f64> = policy.logstd.iter().map(|l| l.exp()).collect();
    let mut out = Vec::with_capacity(counts.total());
    let modes = std::iter::repeat_n(0u8, counts.normal)
        .chain(std::iter::repeat_n(1, counts.bigger))
        .chain(std::iter::repeat_n(2, counts.smaller));
    for mode in modes {
        let a_p = (0..n)
            .map(|j| {
                let e: f64 = StandardNormal.sample(rng);
                let z = match mode {
                    0 => policy.mu[j] + sigma[j] * e,
                    1 => {
                        let extra: f64 = StandardNormal.sample(rng);
                        policy.mu[j] + sigma[j] * e + extra
                    }
                    _ => policy.mu[j] + counts.flatten * sigma[j] * e,
                };
                squash_clip(z.tanh())
            })
            .collect();
        let o = sample_index(&p_o, rng);
        let c = sample_index(&p_c, rng);
        out.push(RawAction::new(a_p, o, c));
    }
    out
}
