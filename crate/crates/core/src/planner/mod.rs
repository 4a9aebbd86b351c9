//! Sampled Monte-Carlo tree search over the learned model.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::GridEnv;
use crate::error::{Error, Result};
use crate::model::{sample_candidates, Model, NoiseCounts, PolicyOutput, RootNoise};
use crate::safety::{
    can_shut, can_start, legalize, map_action, unmap_action, LegalAction, RawAction,
};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub num_simulations: usize,
    pub discount: f64,
    /// Multiplier on the exploration term.
    pub c_ucb: f64,
    pub max_depth: usize,
    pub counts: NoiseCounts,
    pub dirichlet_alpha: f64,
    pub exploration_fraction: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            num_simulations: 50,
            discount: 0.99,
            c_ucb: 1.25,
            max_depth: 10,
            counts: NoiseCounts::default(),
            dirichlet_alpha: 0.3,
            exploration_fraction: 0.25,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_simulations == 0 {
            return Err(Error::Config(
                "planner.num_simulations must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config("planner.discount must lie in [0, 1]".into()));
        }
        if self.counts.total() == 0 {
            return Err(Error::Config(
                "planner.counts must sample at least one candidate".into(),
            ));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("planner.max_depth must be positive".into()));
        }
        if self.dirichlet_alpha <= 0.0 || !(0.0..=1.0).contains(&self.exploration_fraction) {
            return Err(Error::Config(
                "planner Dirichlet settings out of range".into(),
            ));
        }
        Ok(())
    }
}

/// Model outputs at one search node.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub hidden: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub policy: PolicyOutput<f64>,
}

/// What the search needs from a learned model.
pub trait SearchModel: Sync {
    fn initial(&self, obs: &[f64]) -> Result<Evaluation>;
    fn recurrent(&self, hidden: &[f64], action: &[f64]) -> Evaluation;
}

impl<T: Real> SearchModel for Model<T> {
    fn initial(&self, obs: &[f64]) -> Result<Evaluation> {
        let out = self.initial_inference(obs)?;
        Ok(Evaluation {
            hidden: out.hidden.iter().map(|v| v.as_f64()).collect(),
            reward: 0.0,
            value: out.value.as_f64(),
            policy: out.policy.to_f64(),
        })
    }

    fn recurrent(&self, hidden: &[f64], action: &[f64]) -> Evaluation {
        let h: Vec<T> = hidden.iter().map(|v| T::lit(*v)).collect();
        let out = self.recurrent_inference(&h, action);
        Evaluation {
            hidden: out.hidden.iter().map(|v| v.as_f64()).collect(),
            reward: out.reward.as_f64(),
            value: out.value.as_f64(),
            policy: out.policy.to_f64(),
        }
    }
}

/// Eligibility masks and legalization of root candidates.
pub trait RootActions {
    /// Startup and shutdown masks over the `n + 1` switch slots.
    fn masks(&self) -> (Vec<bool>, Vec<bool>);
    /// Legal action for `raw` together with its policy-space encoding.
    fn legalize(&self, raw: &RawAction) -> (RawAction, LegalAction);
}

/// Root actions of a live environment: map, legalize, map back.
pub struct EnvRoot<'a> {
    env: &'a GridEnv,
    bounds: Vec<(f64, f64)>,
}

impl<'a> EnvRoot<'a> {
    pub fn new(env: &'a GridEnv) -> Self {
        EnvRoot {
            env,
            bounds: env.action_space(),
        }
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
}

impl RootActions for EnvRoot<'_> {
    fn masks(&self) -> (Vec<bool>, Vec<bool>) {
        let (case, state) = (self.env.case(), self.env.state());
        let ids = case.controllable_ids();
        let mask = |f: &dyn Fn(usize) -> bool| {
            let mut m: Vec<bool> = ids.iter().map(|&i| f(i)).collect();
            m.push(true);
            m
        };
        (
            mask(&|i| can_start(case, state, i)),
            mask(&|i| can_shut(case, state, i)),
        )
    }

    fn legalize(&self, raw: &RawAction) -> (RawAction, LegalAction) {
        let (case, state) = (self.env.case(), self.env.state());
        let mapped = map_action(case, state, raw, &self.bounds);
        let legal = legalize(
            case,
            state,
            &mapped,
            self.env.forecast(),
            &self.bounds,
            self.env.config().balance_redundancy,
        )
        .action;
        (unmap_action(case, &legal, &self.bounds), legal)
    }
}

/// Running bounds of edge values seen in the tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxStats {
    pub min: f64,
    pub max: f64,
}

impl Default for MinMaxStats {
    fn default() -> Self {
        MinMaxStats {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl MinMaxStats {
    pub fn update(&mut self, q: f64) {
        self.min = self.min.min(q);
        self.max = self.max.max(q);
    }

    /// Scale `q` into `[0, 1]`; a degenerate range maps everything to 0.5.
    pub fn normalize(&self, q: f64) -> f64 {
        if self.max > self.min {
            ((q - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }
}

/// Visit count and raw value of one edge, as seen by [`select_child`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildStats {
    pub visits: u32,
    /// `r + γ·W/N`; `None` when unvisited.
    pub q: Option<f64>,
}

/// UCB child selection with a uniform prior `1/K`.
///
/// Unvisited children take the mean normalized value of their visited
/// siblings (0 when none are visited). Ties go to the lowest index.
pub fn select_child(children: &[ChildStats], stats: &MinMaxStats, c_ucb: f64) -> usize {
    assert!(!children.is_empty(), "select_child on a leaf");
    let prior = 1.0 / children.len() as f64;
    let total: u32 = children.iter().map(|c| c.visits).sum();
    let sqrt_total = (total as f64).sqrt();
    let visited: Vec<f64> = children
        .iter()
        .filter_map(|c| c.q.map(|q| stats.normalize(q)))
        .collect();
    let fallback = if visited.is_empty() {
        0.0
    } else {
        visited.iter().sum::<f64>() / visited.len() as f64
    };
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in children.iter().enumerate() {
        let q = c.q.map_or(fallback, |q| stats.normalize(q));
        let score = q + c_ucb * prior * sqrt_total / (1.0 + c.visits as f64);
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub action: RawAction,
    pub child: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub hidden: Vec<f64>,
    /// Predicted reward on the edge into this node.
    pub reward: f64,
    /// Model value at expansion.
    pub value_pred: f64,
    pub visits: u32,
    pub value_sum: f64,
    /// Evaluations repeated because the node sits at the depth limit.
    pub revisits: u32,
    pub depth: usize,
    pub edges: Vec<Edge>,
}

impl Node {
    pub fn value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    pub nodes: Vec<Node>,
    pub stats: MinMaxStats,
    pub discount: f64,
}

impl SearchTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// `r + γ·W/N` of edge `k` of node `id`, when visited.
    pub fn edge_q(&self, id: usize, k: usize) -> Option<f64> {
        let c = &self.nodes[self.nodes[id].edges[k].child?];
        (c.visits > 0).then(|| c.reward + self.discount * c.value())
    }

    pub fn edge_visits(&self, id: usize, k: usize) -> u32 {
        self.nodes[id].edges[k]
            .child
            .map_or(0, |c| self.nodes[c].visits)
    }

    fn child_stats(&self, id: usize) -> Vec<ChildStats> {
        (0..self.nodes[id].edges.len())
            .map(|k| ChildStats {
                visits: self.edge_visits(id, k),
                q: self.edge_q(id, k),
            })
            .collect()
    }

    /// Every node satisfies `N = 1 + revisits + Σ child N`.
    pub fn visits_conserved(&self) -> bool {
        (0..self.nodes.len()).all(|id| {
            let n = &self.nodes[id];
            let children: u32 = (0..n.edges.len()).map(|k| self.edge_visits(id, k)).sum();
            n.visits == 1 + n.revisits + children
        })
    }
}

/// Outcome of one search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Root visit distribution over `candidates`.
    pub pi: Vec<f64>,
    pub visits: Vec<u32>,
    /// Root edge values, `NaN` when unvisited.
    pub q: Vec<f64>,
    pub root_value: f64,
    /// Most visited candidate.
    pub selected: usize,
    pub candidates: Vec<RawAction>,
    pub legal: Vec<LegalAction>,
}

impl SearchResult {
    /// Per-candidate trace: id, visits, Q and prior.
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let prior = 1.0 / self.candidates.len() as f64;
        let mut out = String::from("candidate,visits,q,prior\n");
        for (i, (n, q)) in self.visits.iter().zip(&self.q).enumerate() {
            out.push_str(&format!("{i},{n},{q},{prior}\n"));
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn new_node(eval: Evaluation, depth: usize, actions: Vec<RawAction>) -> Node {
    let edges = actions
        .into_iter()
        .map(|action| Edge {
            action,
            child: None,
        })
        .collect();
    Node {
        hidden: eval.hidden,
        reward: eval.reward,
        value_pred: eval.value,
        visits: 0,
        value_sum: 0.0,
        revisits: 0,
        depth,
        edges,
    }
}

/// Search from `obs` over a fixed set of root candidates.
pub fn search_with_candidates<M: SearchModel + ?Sized>(
    model: &M,
    obs: &[f64],
    candidates: &[RawAction],
    cfg: &PlannerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SearchTree> {
    assert!(
        !candidates.is_empty(),
        "search needs at least one root candidate"
    );
    let root_eval = model.initial(obs)?;
    let v0 = root_eval.value;
    let mut root = new_node(root_eval, 0, candidates.to_vec());
    root.visits = 1;
    root.value_sum = v0;
    let mut tree = SearchTree {
        nodes: vec![root],
        stats: MinMaxStats::default(),
        discount: cfg.discount,
    };
    for _ in 0..cfg.num_simulations {
        simulate(&mut tree, model, cfg, rng);
    }
    Ok(tree)
}

fn simulate<M: SearchModel + ?Sized>(
    tree: &mut SearchTree,
    model: &M,
    cfg: &PlannerConfig,
    rng: &mut ChaCha8Rng,
) {
    let mut path = vec![0usize];
    let mut id = 0;
    let leaf_value = loop {
        if tree.nodes[id].depth >= cfg.max_depth {
            tree.nodes[id].revisits += 1;
            break tree.nodes[id].value_pred;
        }
        let k = select_child(&tree.child_stats(id), &tree.stats, cfg.c_ucb);
        match tree.nodes[id].edges[k].child {
            Some(c) => {
                id = c;
                path.push(c);
            }
            None => {
                let eval = {
                    let n = &tree.nodes[id];
                    model.recurrent(&n.hidden, &n.edges[k].action.encode())
                };
                let v = eval.value;
                let actions = sample_candidates(&eval.policy, &cfg.counts.plain(), None, rng);
                let child = new_node(eval, tree.nodes[id].depth + 1, actions);
                tree.nodes.push(child);
                let c = tree.nodes.len() - 1;
                tree.nodes[id].edges[k].child = Some(c);
                path.push(c);
                break v;
            }
        }
    };
    let mut g = leaf_value;
    for &n in path.iter().rev() {
        let node = &mut tree.nodes[n];
        node.value_sum += g;
        node.visits += 1;
        g = node.reward + cfg.discount * g;
        if n != 0 {
            let q = node.reward + cfg.discount * node.value();
            tree.stats.update(q);
        }
    }
}

/// Summarize the root of `tree`.
pub fn summarize(tree: &SearchTree, legal: Vec<LegalAction>) -> SearchResult {
    let root = tree.root();
    let k = root.edges.len();
    let visits: Vec<u32> = (0..k).map(|i| tree.edge_visits(0, i)).collect();
    let total: u32 = visits.iter().sum();
    let pi = if total == 0 {
        vec![1.0 / k as f64; k]
    } else {
        visits.iter().map(|n| *n as f64 / total as f64).collect()
    };
    let q = (0..k)
        .map(|i| tree.edge_q(0, i).unwrap_or(f64::NAN))
        .collect();
    SearchResult {
        selected: argmax(&pi),
        pi,
        visits,
        q,
        root_value: root.value(),
        candidates: root.edges.iter().map(|e| e.action.clone()).collect(),
        legal,
    }
}

/// Full search: sample root candidates with exploration noise, legalize
/// them, then run the simulations.
pub fn run_search<M: SearchModel + ?Sized, R: RootActions + ?Sized>(
    model: &M,
    obs: &[f64],
    root: &R,
    cfg: &PlannerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SearchResult> {
    let eval = model.initial(obs)?;
    let (startup_mask, shutdown_mask) = root.masks();
    let noise = RootNoise {
        dirichlet_alpha: cfg.dirichlet_alpha,
        fraction: cfg.exploration_fraction,
        startup_mask,
        shutdown_mask,
    };
    let (raw, legal): (Vec<RawAction>, Vec<LegalAction>) =
        sample_candidates(&eval.policy, &cfg.counts, Some(&noise), rng)
            .iter()
            .map(|a| root.legalize(a))
            .unzip();
    let tree = search_with_candidates(model, obs, &raw, cfg, rng)?;
    Ok(summarize(&tree, legal))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMode {
    Train,
    Eval,
}

/// Pick a root candidate: `π^(1/τ)` sampling in training, argmax otherwise.
pub fn select_action(
    result: &SearchResult,
    temperature: f64,
    mode: SelectMode,
    rng: &mut ChaCha8Rng,
) -> usize {
    if mode == SelectMode::Eval || temperature <= 0.0 {
        return argmax(&result.pi);
    }
    let m = result.pi.iter().cloned().fold(0.0, f64::max);
    let w: Vec<f64> = result
        .pi
        .iter()
        .map(|p| {
            if *p > 0.0 {
                (p / m).powf(1.0 / temperature)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return argmax(&result.pi);
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return i;
        }
    }
    argmax(&result.pi)
}

/// Temperature for training step `step` of `total`.
pub fn temperature_at(step: usize, total: usize) -> f64 {
    if 2 * step < total {
        1.0
    } else {
        0.5
    }
}
