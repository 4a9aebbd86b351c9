use serde::{Deserialize, Serialize};

const CLIP: f64 = 10.0;

/// Per-feature running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|s| {
                if self.count < 2.0 {
                    1.0
                } else {
                    (s / self.count + 1e-8).sqrt()
                }
            })
            .collect()
    }

    /// Standardize and clip to ±10. Before any update this is the identity
    /// (up to clipping).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let sd = self.std();
        x.iter()
            .zip(&self.mean)
            .zip(&sd)
            .map(|((v, m), s)| ((v - m) / s).clamp(-CLIP, CLIP))
            .collect()
    }
}
