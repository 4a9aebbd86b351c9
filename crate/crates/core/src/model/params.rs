use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

/// A named, row-major parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            name: name.into(),
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Flat collection of tensors addressed by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn push(&mut self, t: Tensor<T>) -> usize {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn all_finite(&self) -> bool {
        self.iter_values().all(|v| v.is_finite())
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + s * *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x = *x * s;
            }
        }
    }

    pub fn norm(&self) -> T {
        self.iter_values()
            .fold(T::zero(), |acc, v| acc + *v * *v)
            .sqrt()
    }
}

/// Append a dense layer `out × inp` with uniform fan-in initialization.
pub(crate) fn dense<T: Real>(
    ps: &mut ParamSet<T>,
    name: &str,
    inp: usize,
    out: usize,
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> (usize, usize) {
    let bound = gain * (6.0 / inp as f64).sqrt();
    let mut w = Tensor::zeros(format!("{name}.w"), vec![out, inp]);
    for v in &mut w.data {
        *v = T::lit(rng.random_range(-bound..bound));
    }
    let b = Tensor::zeros(format!("{name}.b"), vec![out]);
    (ps.push(w), ps.push(b))
}

/// `y = W x + b` for a row-major `W`.
pub fn linear<T: Real>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let n_in = x.len();
    debug_assert_eq!(w.len(), b.len() * n_in);
    b.iter()
        .zip(w.chunks_exact(n_in))
        .map(|(bi, row)| row.iter().zip(x).fold(*bi, |acc, (a, c)| acc + *a * *c))
        .collect()
}

/// Scale a vector into `[0, 1]` by its own min and max.
pub fn min_max<T: Real>(x: &[T]) -> Vec<T> {
    let (lo, hi) = x
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(l, h), v| {
            (l.min(*v), h.max(*v))
        });
    let span = (hi - lo).max(T::lit(MIN_MAX_FLOOR));
    x.iter().map(|v| (*v - lo) / span).collect()
}

/// Smallest range used by [`min_max`].
pub const MIN_MAX_FLOOR: f64 = 1e-5;
