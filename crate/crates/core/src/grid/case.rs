//! Static grid description and the JSON case format.
//!
//! A case file is a single JSON object:
//!
//! ```json
//! { "format": 1, "s_base": 100.0,
//!   "buses": [{"id": 0, "kind": "slack", "v_max": 1.05, "v_min": 0.95}],
//!   "lines": [{"from_bus": 0, "to_bus": 1, "r": 0.01, "x": 0.1, "b": 0.02, "i_max": 2.0}],
//!   "generators": [{"bus": 0, "kind": "balanced", "p_max": 150, "p_min": 30, ...}],
//!   "loads": [{"bus": 1, "base_p": 100, "base_q": 20}] }
//! ```
//!
//! Line parameters are per-unit on `s_base`; generator and load powers are in
//! MW/MVAr. The line load rate is the sending-end (`from_bus`) current
//! magnitude divided by `i_max`.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CASE_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub id: usize,
    pub kind: BusKind,
    pub v_max: f64,
    pub v_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance, split half to each end.
    pub b: f64,
    pub i_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    Thermal,
    Renewable,
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub bus: usize,
    pub kind: GenKind,
    pub p_max: f64,
    pub p_min: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub v_set: f64,
    /// Fraction of `p_max` that may be moved in one step.
    pub ramp_rate: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub c_onoff: f64,
}

impl GeneratorSpec {
    pub fn ramp_mw(&self) -> f64 {
        self.ramp_rate * self.p_max
    }

    /// Quadratic running cost in $ for an online unit at `p` MW.
    pub fn running_cost(&self, p: f64) -> f64 {
        self.c2 * p * p + self.c1 * p + self.c0
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub bus: usize,
    pub base_p: f64,
    pub base_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    format: u32,
    s_base: f64,
    buses: Vec<BusSpec>,
    lines: Vec<LineSpec>,
    generators: Vec<GeneratorSpec>,
    loads: Vec<LoadSpec>,
}

/// Validated static grid. Construct through [`GridCase::from_json`],
/// [`load_case`] or [`GridCase::new`]; all three run the same checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub s_base: f64,
    pub buses: Vec<BusSpec>,
    pub lines: Vec<LineSpec>,
    pub generators: Vec<GeneratorSpec>,
    pub loads: Vec<LoadSpec>,
    bus_index: HashMap<usize, usize>,
}

pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GridCase::from_json(&text)
}

impl GridCase {
    pub fn new(
        s_base: f64,
        buses: Vec<BusSpec>,
        lines: Vec<LineSpec>,
        generators: Vec<GeneratorSpec>,
        loads: Vec<LoadSpec>,
    ) -> Result<Self> {
        let bus_index = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let case = GridCase {
            s_base,
            buses,
            lines,
            generators,
            loads,
            bus_index,
        };
        let problems = case.check();
        if problems.is_empty() {
            Ok(case)
        } else {
            Err(Error::InvalidCase(problems))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CaseFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format != CASE_FORMAT {
            return Err(Error::InvalidCase(vec![format!(
                "unsupported format {} (expected {CASE_FORMAT})",
                file.format
            )]));
        }
        GridCase::new(
            file.s_base,
            file.buses,
            file.lines,
            file.generators,
            file.loads,
        )
    }

    pub fn to_json(&self) -> String {
        let file = CaseFile {
            format: CASE_FORMAT,
            s_base: self.s_base,
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            generators: self.generators.clone(),
            loads: self.loads.clone(),
        };
        serde_json::to_string_pretty(&file).expect("case serializes")
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_line(&self) -> usize {
        self.lines.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn n_load(&self) -> usize {
        self.loads.len()
    }

    /// Position of bus `id` in [`GridCase::buses`].
    pub fn bus_pos(&self, id: usize) -> usize {
        self.bus_index[&id]
    }

    pub fn balanced_id(&self) -> usize {
        self.generators
            .iter()
            .position(|g| g.kind == GenKind::Balanced)
            .expect("validated case has a balanced generator")
    }

    pub fn balanced(&self) -> &GeneratorSpec {
        &self.generators[self.balanced_id()]
    }

    pub fn thermal_ids(&self) -> Vec<usize> {
        self.ids_of(GenKind::Thermal)
    }

    pub fn renewable_ids(&self) -> Vec<usize> {
        self.ids_of(GenKind::Renewable)
    }

    /// Generators the agent controls: every unit except the balanced one,
    /// in case order.
    pub fn controllable_ids(&self) -> Vec<usize> {
        (0..self.n_gen())
            .filter(|&i| self.generators[i].kind != GenKind::Balanced)
            .collect()
    }

    fn ids_of(&self, kind: GenKind) -> Vec<usize> {
        (0..self.n_gen())
            .filter(|&i| self.generators[i].kind == kind)
            .collect()
    }

    pub fn to_pu(&self, mw: f64) -> f64 {
        mw / self.s_base
    }

    pub fn from_pu(&self, pu: f64) -> f64 {
        pu * self.s_base
    }

    fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.s_base > 0.0 && self.s_base.is_finite()) {
            errs.push(format!("s_base must be positive, got {}", self.s_base));
        }
        if self.buses.is_empty() {
            errs.push("case has no buses".into());
        }
        if self.bus_index.len() != self.buses.len() {
            errs.push("duplicate bus ids".into());
        }
        let n_slack = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        match n_slack {
            0 => errs.push("no slack bus".into()),
            1 => {}
            _ => errs.push("multiple slack buses".into()),
        }
        for b in &self.buses {
            if !(b.v_min > 0.0 && b.v_min < b.v_max) {
                errs.push(format!(
                    "bus {}: voltage bounds must satisfy 0 < v_min < v_max (got {}, {})",
                    b.id, b.v_min, b.v_max
                ));
            }
        }

        let known = |id: usize| self.bus_index.contains_key(&id);
        for (i, l) in self.lines.iter().enumerate() {
            if !known(l.from_bus) || !known(l.to_bus) {
                errs.push(format!("line {i}: unknown bus"));
            }
            if l.from_bus == l.to_bus {
                errs.push(format!("line {i}: from_bus equals to_bus"));
            }
            if l.x == 0.0 || !l.x.is_finite() {
                errs.push(format!("line {i}: reactance must be non-zero"));
            }
            if !(l.i_max > 0.0) {
                errs.push(format!("line {i}: i_max must be positive"));
            }
            if !(l.r.is_finite() && l.b.is_finite()) {
                errs.push(format!("line {i}: non-finite parameters"));
            }
        }

        let n_bal = self
            .generators
            .iter()
            .filter(|g| g.kind == GenKind::Balanced)
            .count();
        if n_bal != 1 {
            errs.push(format!(
                "expected exactly one balanced generator, found {n_bal}"
            ));
        }
        for (i, g) in self.generators.iter().enumerate() {
            if !known(g.bus) {
                errs.push(format!("generator {i}: unknown bus {}", g.bus));
                continue;
            }
            if !(g.p_min < g.p_max) {
                errs.push(format!(
                    "generator {i}: p_min ({}) must be below p_max ({})",
                    g.p_min, g.p_max
                ));
            }
            if !(g.q_min < g.q_max) {
                errs.push(format!(
                    "generator {i}: q_min ({}) must be below q_max ({})",
                    g.q_min, g.q_max
                ));
            }
            if g.kind == GenKind::Renewable && g.p_min != 0.0 {
                errs.push(format!("generator {i}: renewable units need p_min = 0"));
            }
            if !(g.ramp_rate >= 0.0 && g.ramp_rate.is_finite()) {
                errs.push(format!("generator {i}: ramp_rate must be non-negative"));
            }
            if !(g.v_set > 0.0) {
                errs.push(format!("generator {i}: v_set must be positive"));
            }
            let costs = [g.c2, g.c1, g.c0, g.c_onoff];
            if costs.iter().any(|c| !c.is_finite()) {
                errs.push(format!("generator {i}: non-finite cost coefficient"));
            }
            let kind = self.buses[self.bus_index[&g.bus]].kind;
            match (g.kind, kind) {
                (GenKind::Balanced, BusKind::Slack) => {}
                (GenKind::Balanced, _) => errs.push(format!(
                    "generator {i}: balanced unit must sit on the slack bus"
                )),
                (_, BusKind::Pv) => {}
                _ => errs.push(format!(
                    "generator {i}: non-balanced units must sit on PV buses"
                )),
            }
        }
        for b in &self.buses {
            if b.kind == BusKind::Pv && !self.generators.iter().any(|g| g.bus == b.id) {
                errs.push(format!("bus {}: PV bus without a generator", b.id));
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            if !known(l.bus) {
                errs.push(format!("load {i}: unknown bus {}", l.bus));
            }
        }

        if errs.is_empty() && !self.is_connected(&vec![true; self.n_line()]) {
            errs.push("network is not connected".into());
        }
        errs
    }

    /// Whether every bus is reachable from the first under `line_status`.
    pub fn is_connected(&self, line_status: &[bool]) -> bool {
        let n = self.n_bus();
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for (l, on) in self.lines.iter().zip(line_status) {
            if *on {
                let (f, t) = (self.bus_pos(l.from_bus), self.bus_pos(l.to_bus));
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}
