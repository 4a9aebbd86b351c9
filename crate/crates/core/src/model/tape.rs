//! Vector-level reverse-mode differentiation over a [`ParamSet`].

use super::params::{linear, ParamSet, MIN_MAX_FLOOR};
use crate::scalar::Real;

pub type Var = usize;

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Linear {
        x: Var,
        w: usize,
        b: usize,
    },
    Relu(Var),
    MinMax {
        x: Var,
        imin: usize,
        imax: usize,
        span: T,
        floored: bool,
    },
    Concat(Var, Var),
    Slice {
        x: Var,
        start: usize,
    },
    GradScale {
        x: Var,
        s: T,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    SqErr {
        x: Var,
        target: T,
    },
    Cosine {
        x: Var,
        target: Vec<T>,
    },
    SquashedNll {
        mu: Var,
        logstd: Var,
        targets: Vec<(T, Vec<T>)>,
    },
    SoftmaxXent {
        logits: Var,
        target: Vec<T>,
    },
    GaussEntropy(Var),
    CatEntropy(Var),
    WeightedSum(Vec<(Var, T)>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    op: Op<T>,
}

pub struct Tape<'p, T> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

fn half_ln_2pi<T: Real>() -> T {
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

fn log_softmax<T: Real>(z: &[T]) -> Vec<T> {
    let m = z.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
    let lse = m + z.iter().map(|v| (*v - m).exp()).sum::<T>().ln();
    z.iter().map(|v| *v - lse).collect()
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Vec<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v].value[0]
    }

    pub fn input(&mut self, x: Vec<T>) -> Var {
        self.push(x, Op::Input)
    }

    pub fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let y = linear(
            &self.params.get(w).data,
            &self.params.get(b).data,
            &self.nodes[x].value,
        );
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.nodes[x]
            .value
            .iter()
            .map(|v| v.max(T::zero()))
            .collect();
        self.push(y, Op::Relu(x))
    }

    pub fn min_max(&mut self, x: Var) -> Var {
        let xs = &self.nodes[x].value;
        let (mut imin, mut imax) = (0, 0);
        for (i, v) in xs.iter().enumerate() {
            if *v < xs[imin] {
                imin = i;
            }
            if *v > xs[imax] {
                imax = i;
            }
        }
        let raw = xs[imax] - xs[imin];
        let floor = T::lit(MIN_MAX_FLOOR);
        let floored = raw < floor;
        let span = if floored { floor } else { raw };
        let lo = xs[imin];
        let y = xs.iter().map(|v| (*v - lo) / span).collect();
        self.push(
            y,
            Op::MinMax {
                x,
                imin,
                imax,
                span,
                floored,
            },
        )
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.nodes[a].value.clone();
        y.extend_from_slice(&self.nodes[b].value);
        self.push(y, Op::Concat(a, b))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let y = self.nodes[x].value[start..start + len].to_vec();
        self.push(y, Op::Slice { x, start })
    }

    /// Identity forward; the gradient is multiplied by `s`.
    pub fn grad_scale(&mut self, x: Var, s: T) -> Var {
        let y = self.nodes[x].value.clone();
        self.push(y, Op::GradScale { x, s })
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let y = self.nodes[x]
            .value
            .iter()
            .map(|v| v.max(lo).min(hi))
            .collect();
        self.push(y, Op::Clamp { x, lo, hi })
    }

    /// `(x - target)^2` for a scalar node.
    pub fn sq_err(&mut self, x: Var, target: T) -> Var {
        let d = self.scalar(x) - target;
        self.push(vec![d * d], Op::SqErr { x, target })
    }

    /// `1 - cos(x, target)` with `target` held constant.
    pub fn cosine_loss(&mut self, x: Var, target: Vec<T>) -> Var {
        let xs = &self.nodes[x].value;
        let (dot, nx, nt) = cos_parts(xs, &target);
        self.push(vec![T::one() - dot / (nx * nt)], Op::Cosine { x, target })
    }

    /// `-Σ w_i log p(a_i)` under a tanh-squashed diagonal Gaussian; each
    /// target is `(w_i, a_i)` with `|a_i| < 1`.
    pub fn squashed_nll(&mut self, mu: Var, logstd: Var, targets: &[(T, Vec<T>)]) -> Var {
        let m = &self.nodes[mu].value;
        let ls = &self.nodes[logstd].value;
        let mut total = T::zero();
        let mut pre = Vec::with_capacity(targets.len());
        for (w, a) in targets {
            let u: Vec<T> = a.iter().map(|v| v.atanh()).collect();
            total = total - *w * log_prob_pre(m, ls, &u, a);
            pre.push((*w, u));
        }
        self.push(
            vec![total],
            Op::SquashedNll {
                mu,
                logstd,
                targets: pre,
            },
        )
    }

    /// `-targetᵀ · log_softmax(logits)`.
    pub fn softmax_xent(&mut self, logits: Var, target: Vec<T>) -> Var {
        let ls = log_softmax(&self.nodes[logits].value);
        let v = -ls.iter().zip(&target).map(|(l, t)| *l * *t).sum::<T>();
        self.push(vec![v], Op::SoftmaxXent { logits, target })
    }

    /// Differential entropy of a diagonal Gaussian with log-std `logstd`.
    pub fn gauss_entropy(&mut self, logstd: Var) -> Var {
        let c = T::lit(0.5) + half_ln_2pi::<T>();
        let h = self.nodes[logstd].value.iter().map(|l| *l + c).sum();
        self.push(vec![h], Op::GaussEntropy(logstd))
    }

    pub fn cat_entropy(&mut self, logits: Var) -> Var {
        let ls = log_softmax(&self.nodes[logits].value);
        let h = -ls.iter().map(|l| l.exp() * *l).sum::<T>();
        self.push(vec![h], Op::CatEntropy(logits))
    }

    pub fn weighted_sum(&mut self, terms: Vec<(Var, T)>) -> Var {
        let v = terms
            .iter()
            .fold(T::zero(), |acc, (x, w)| acc + *w * self.nodes[*x].value[0]);
        self.push(vec![v], Op::WeightedSum(terms))
    }

    /// Smallest distance of any recorded non-smooth point (ReLU input, clamp
    /// bound, min-max extreme tie) from its kink. Finite differences are only
    /// meaningful when this exceeds the perturbation's effect.
    pub fn kink_margin(&self) -> T {
        let mut m = T::infinity();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in &self.nodes[*x].value {
                        m = m.min(v.abs());
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for v in &self.nodes[*x].value {
                        m = m.min((*v - *lo).abs()).min((*v - *hi).abs());
                    }
                }
                Op::MinMax {
                    x,
                    imin,
                    imax,
                    floored,
                    ..
                } => {
                    let xs = &self.nodes[*x].value;
                    if *floored {
                        return T::zero();
                    }
                    for (i, v) in xs.iter().enumerate() {
                        if i != *imin {
                            m = m.min(*v - xs[*imin]);
                        }
                        if i != *imax {
                            m = m.min(xs[*imax] - *v);
                        }
                    }
                }
                _ => {}
            }
        }
        m
    }

    /// Gradient of scalar node `root` with respect to every parameter.
    pub fn backward(&self, root: Var) -> ParamSet<T> {
        let mut pg = self.params.zeros_like();
        self.backward_into(root, &mut pg);
        pg
    }

    /// Accumulate the gradient of `root` into `pg`.
    pub fn backward_into(&self, root: Var, pg: &mut ParamSet<T>) {
        let mut g: Vec<Vec<T>> = vec![Vec::new(); self.nodes.len()];
        g[root] = vec![T::one()];
        for id in (0..=root).rev() {
            if g[id].is_empty() {
                continue;
            }
            let gy = std::mem::take(&mut g[id]);
            let node = &self.nodes[id];
            let add = |g: &mut Vec<Vec<T>>, to: Var, i: usize, v: T| {
                if g[to].is_empty() {
                    g[to] = vec![T::zero(); self.nodes[to].value.len()];
                }
                g[to][i] = g[to][i] + v;
            };
            match &node.op {
                Op::Input => {}
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let n_in = xv.len();
                    let wv = &self.params.get(*w).data;
                    let needs_x = !matches!(self.nodes[*x].op, Op::Input);
                    let mut gx = if needs_x {
                        vec![T::zero(); n_in]
                    } else {
                        Vec::new()
                    };
                    {
                        let gw = &mut pg.tensors[*w].data;
                        for (i, gi) in gy.iter().enumerate() {
                            if *gi == T::zero() {
                                continue;
                            }
                            let row = &mut gw[i * n_in..(i + 1) * n_in];
                            for (r, xj) in row.iter_mut().zip(xv) {
                                *r = *r + *gi * *xj;
                            }
                            if needs_x {
                                let wrow = &wv[i * n_in..(i + 1) * n_in];
                                for (gxj, wij) in gx.iter_mut().zip(wrow) {
                                    *gxj = *gxj + *wij * *gi;
                                }
                            }
                        }
                    }
                    for (gb, gi) in pg.tensors[*b].data.iter_mut().zip(&gy) {
                        *gb = *gb + *gi;
                    }
                    if needs_x {
                        for (j, v) in gx.into_iter().enumerate() {
                            add(&mut g, *x, j, v);
                        }
                    }
                }
                Op::Relu(x) => {
                    for (i, gi) in gy.iter().enumerate() {
                        if self.nodes[*x].value[i] > T::zero() {
                            add(&mut g, *x, i, *gi);
                        }
                    }
                }
                Op::MinMax {
                    x,
                    imin,
                    imax,
                    span,
                    floored,
                } => {
                    let mut sum_g = T::zero();
                    let mut sum_gy = T::zero();
                    for (i, gi) in gy.iter().enumerate() {
                        add(&mut g, *x, i, *gi / *span);
                        sum_g = sum_g + *gi;
                        sum_gy = sum_gy + *gi * node.value[i];
                    }
                    if *floored {
                        add(&mut g, *x, *imin, -sum_g / *span);
                    } else {
                        add(&mut g, *x, *imin, (sum_gy - sum_g) / *span);
                        add(&mut g, *x, *imax, -sum_gy / *span);
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[*a].value.len();
                    for (i, gi) in gy.iter().enumerate() {
                        if i < na {
                            add(&mut g, *a, i, *gi);
                        } else {
                            add(&mut g, *b, i - na, *gi);
                        }
                    }
                }
                Op::Slice { x, start } => {
                    for (i, gi) in gy.iter().enumerate() {
                        add(&mut g, *x, start + i, *gi);
                    }
                }
                Op::GradScale { x, s } => {
                    for (i, gi) in gy.iter().enumerate() {
                        add(&mut g, *x, i, *gi * *s);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for (i, gi) in gy.iter().enumerate() {
                        let v = self.nodes[*x].value[i];
                        if v >= *lo && v <= *hi {
                            add(&mut g, *x, i, *gi);
                        }
                    }
                }
                Op::SqErr { x, target } => {
                    let d = self.nodes[*x].value[0] - *target;
                    add(&mut g, *x, 0, gy[0] * T::lit(2.0) * d);
                }
                Op::Cosine { x, target } => {
                    let xs = &self.nodes[*x].value;
                    let (dot, nx, nt) = cos_parts(xs, target);
                    for (i, (xi, ti)) in xs.iter().zip(target).enumerate() {
                        let d = *ti / (nx * nt) - dot * *xi / (nx * nx * nx * nt);
                        add(&mut g, *x, i, -gy[0] * d);
                    }
                }
                Op::SquashedNll {
                    mu,
                    logstd,
                    targets,
                } => {
                    let m = &self.nodes[*mu].value;
                    let ls = &self.nodes[*logstd].value;
                    for j in 0..m.len() {
                        let inv_var = (-T::lit(2.0) * ls[j]).exp();
                        let (mut gm, mut gl) = (T::zero(), T::zero());
                        for (w, u) in targets {
                            let d = u[j] - m[j];
                            gm = gm - *w * d * inv_var;
                            gl = gl - *w * (d * d * inv_var - T::one());
                        }
                        add(&mut g, *mu, j, gy[0] * gm);
                        add(&mut g, *logstd, j, gy[0] * gl);
                    }
                }
                Op::SoftmaxXent { logits, target } => {
                    let ls = log_softmax(&self.nodes[*logits].value);
                    let total: T = target.iter().copied().sum();
                    for (i, (l, t)) in ls.iter().zip(target).enumerate() {
                        add(&mut g, *logits, i, gy[0] * (l.exp() * total - *t));
                    }
                }
                Op::GaussEntropy(x) => {
                    for i in 0..self.nodes[*x].value.len() {
                        add(&mut g, *x, i, gy[0]);
                    }
                }
                Op::CatEntropy(x) => {
                    let ls = log_softmax(&self.nodes[*x].value);
                    let h = node.value[0];
                    for (i, l) in ls.iter().enumerate() {
                        add(&mut g, *x, i, -gy[0] * l.exp() * (*l + h));
                    }
                }
                Op::WeightedSum(terms) => {
                    for (x, w) in terms {
                        add(&mut g, *x, 0, gy[0] * *w);
                    }
                }
            }
        }
    }
}

fn cos_parts<T: Real>(x: &[T], t: &[T]) -> (T, T, T) {
    let eps = T::lit(1e-12);
    let dot = x.iter().zip(t).map(|(a, b)| *a * *b).sum::<T>();
    let nx = x.iter().map(|a| *a * *a).sum::<T>().sqrt().max(eps);
    let nt = t.iter().map(|a| *a * *a).sum::<T>().sqrt().max(eps);
    (dot, nx, nt)
}

/// Log-density of `a = tanh(u)` given the pre-squash sample `u`.
pub(crate) fn log_prob_pre<T: Real>(mu: &[T], logstd: &[T], u: &[T], a: &[T]) -> T {
    let mut lp = T::zero();
    for j in 0..mu.len() {
        let z = (u[j] - mu[j]) / logstd[j].exp();
        lp = lp
            - T::lit(0.5) * z * z
            - logstd[j]
            - half_ln_2pi::<T>()
            - (T::one() - a[j] * a[j]).ln();
    }
    lp
}
