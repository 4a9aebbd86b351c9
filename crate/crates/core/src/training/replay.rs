//! Prioritized replay over trajectory positions.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Trajectory;

/// Binary sum tree over a fixed number of leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(leaves: usize) -> Self {
        let leaves = leaves.max(1).next_power_of_two();
        SumTree {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if mass < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}

/// One sampled position and its importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPosition {
    pub slot: usize,
    pub position: usize,
    pub weight: f64,
    pub trajectory: Arc<Trajectory>,
}

/// Ring of trajectories with per-position priorities `p^α`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    max_len: usize,
    alpha: f64,
    slots: Vec<Option<Arc<Trajectory>>>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
    positions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, max_len: usize, alpha: f64) -> Self {
        ReplayBuffer {
            capacity,
            max_len,
            alpha,
            slots: vec![None; capacity],
            next: 0,
            tree: SumTree::new(capacity * max_len),
            max_priority: 1.0,
            positions: 0,
        }
    }

    /// Stored trajectories.
    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.positions == 0
    }

    /// Sampleable positions.
    pub fn positions(&self) -> usize {
        self.positions
    }

    /// Store a trajectory, evicting the oldest when full. New positions get
    /// the largest priority seen so far.
    pub fn push(&mut self, traj: Arc<Trajectory>) -> usize {
        assert!(
            traj.len() <= self.max_len,
            "trajectory longer than buffer rows"
        );
        let slot = self.next;
        self.next = (self.next + 1) % self.capacity;
        if let Some(old) = self.slots[slot].take() {
            self.positions -= old.len();
        }
        let p = self.max_priority.powf(self.alpha);
        for pos in 0..self.max_len {
            let v = if pos < traj.len() { p } else { 0.0 };
            self.tree.set(slot * self.max_len + pos, v);
        }
        self.positions += traj.len();
        self.slots[slot] = Some(traj);
        slot
    }

    pub fn priority(&self, slot: usize, position: usize) -> f64 {
        self.tree
            .get(slot * self.max_len + position)
            .powf(1.0 / self.alpha)
    }

    /// Probability of drawing `(slot, position)`.
    pub fn probability(&self, slot: usize, position: usize) -> f64 {
        self.tree.get(slot * self.max_len + position) / self.tree.total()
    }

    pub fn update_priority(&mut self, slot: usize, position: usize, priority: f64) {
        assert!(
            priority > 0.0 && priority.is_finite(),
            "priority must be positive"
        );
        if self.slots[slot]
            .as_ref()
            .is_none_or(|t| position >= t.len())
        {
            return;
        }
        self.max_priority = self.max_priority.max(priority);
        self.tree
            .set(slot * self.max_len + position, priority.powf(self.alpha));
    }

    /// Draw `n` positions with probability `∝ p^α`; weights are
    /// `(1/(N·P))^β` divided by their batch maximum.
    pub fn sample(&self, n: usize, beta: f64, rng: &mut ChaCha8Rng) -> Vec<SampledPosition> {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        let total = self.tree.total();
        let count = self.positions as f64;
        let mut out: Vec<SampledPosition> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                let leaf = self.tree.find(u);
                let (slot, position) = (leaf / self.max_len, leaf % self.max_len);
                let p = self.tree.get(leaf) / total;
                SampledPosition {
                    slot,
                    position,
                    weight: (1.0 / (count * p)).powf(beta),
                    trajectory: self.slots[slot]
                        .clone()
                        .expect("positive priority implies data"),
                }
            })
            .collect();
        let max = out.iter().map(|s| s.weight).fold(0.0, f64::max);
        out.iter_mut().for_each(|s| s.weight /= max);
        out
    }
}
