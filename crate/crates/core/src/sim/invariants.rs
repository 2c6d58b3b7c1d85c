use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerTier;
use crate::stl::{monitor_formula, FormulaVerdict, TaskOwner};

use super::engine::{collision_label, comm_label, obstacle_label, sub, Setup, SimulationTrace};
use super::SimError;

pub const INVARIANT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TaskBarrier,
    Communication,
    Collision,
    Obstacle,
    Gamma,
    Rounds,
    Tokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub label: String,
    pub step: usize,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierMinimum {
    pub value: f64,
    pub t: f64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub steps: usize,
    pub final_time: f64,
    pub verdicts: BTreeMap<String, FormulaVerdict>,
    /// Minimum over samples and substates of every monitored barrier.
    pub minima: BTreeMap<String, BarrierMinimum>,
    pub violations: Vec<Violation>,
    /// Findings that are not invariant failures, e.g. a negative independent barrier.
    pub notes: Vec<String>,
    pub gamma_min: BTreeMap<usize, f64>,
    pub token_rounds: usize,
    pub round_bound: usize,
    pub max_reduction_rounds: usize,
    /// Whether both endpoints of each task edge ran tier A at every step.
    pub tier_a_edges: BTreeMap<String, bool>,
    pub tier_counts: BTreeMap<usize, BTreeMap<String, usize>>,
    pub halted: Option<String>,
}

impl InvariantReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && self.halted.is_none()
    }

    /// True when every task barrier, collaborative and independent, stayed nonnegative.
    pub fn task_barriers_nonnegative(&self, setup: &Setup) -> bool {
        task_labels(setup).iter().all(|l| self.minima.get(l).is_none_or(|m| m.value >= -INVARIANT_TOL))
    }

    pub fn min_of(&self, label: &str) -> Option<f64> {
        self.minima.get(label).map(|m| m.value)
    }
}

fn task_labels(setup: &Setup) -> Vec<String> {
    setup.edge_barriers.values().chain(setup.independent.values()).map(|b| b.label.clone()).collect()
}

struct Sample<'a> {
    step: usize,
    t: f64,
    left: bool,
    states: BTreeMap<usize, &'a Vec<f64>>,
}

fn samples<'a>(trace: &'a SimulationTrace) -> Vec<Sample<'a>> {
    let cfg = &trace.config;
    let n = cfg.substeps.max(1);
    let mut out = Vec::new();
    for (idx, s) in trace.steps.iter().enumerate() {
        out.push(Sample { step: idx, t: s.t, left: false, states: s.agents.iter().map(|(i, a)| (*i, &a.state)).collect() });
        for q in 1..=n {
            let states: BTreeMap<usize, &Vec<f64>> =
                s.agents.iter().map(|(i, a)| (*i, a.substates.get(q - 1).unwrap_or(&a.state))).collect();
            let t = (s.k * n + q) as f64 * cfg.dt / n as f64;
            out.push(Sample { step: idx, t, left: q == n, states });
        }
    }
    if !trace.steps.is_empty() || trace.final_states.len() == cfg.agents.len() {
        out.push(Sample {
            step: trace.steps.len().saturating_sub(1),
            t: trace.final_time,
            left: false,
            states: trace.final_states.iter().map(|(i, x)| (*i, x)).collect(),
        });
    }
    out
}

/// Discrete monitor verdict per task, on every sample point except left limits.
pub fn task_verdicts(setup: &Setup, trace: &SimulationTrace) -> Result<BTreeMap<String, FormulaVerdict>, SimError> {
    let pts: Vec<Sample> = samples(trace).into_iter().filter(|s| !s.left).collect();
    let times: Vec<f64> = pts.iter().map(|s| s.t).collect();
    let mut out = BTreeMap::new();
    for task in &setup.tasks {
        let signal: Vec<Vec<f64>> = pts
            .iter()
            .map(|s| {
                let pos = |i: usize| setup.models[&i].position(s.states[&i]);
                match task.owner {
                    TaskOwner::Independent(i) => pos(i),
                    TaskOwner::Collaborative(i, j) => sub(&pos(i), &pos(j)),
                }
            })
            .collect();
        out.insert(task.label.clone(), monitor_formula(&task.formula, &times, &signal)?);
    }
    Ok(out)
}

pub fn check_invariants(trace: &SimulationTrace, setup: &Setup) -> Result<InvariantReport, SimError> {
    let cfg = &trace.config;
    let mut violations = Vec::new();
    let mut notes = Vec::new();

    let mut tier_a_through: BTreeMap<usize, usize> = BTreeMap::new();
    let mut ab_through: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in setup.models.keys() {
        let first = |ok: fn(ControllerTier) -> bool| trace.steps.iter().position(|s| s.agents.get(&i).is_some_and(|a| !ok(a.tier)));
        tier_a_through.insert(i, first(|t| t == ControllerTier::A).unwrap_or(usize::MAX));
        ab_through.insert(i, first(|t| t != ControllerTier::C).unwrap_or(usize::MAX));
    }
    let edge_tier_a = |i: usize, j: usize, step: usize| step < tier_a_through[&i] && step < tier_a_through[&j];
    let edge_tier_ab = |i: usize, j: usize, step: usize| step < ab_through[&i] && step < ab_through[&j];

    let mut kinds: BTreeMap<String, (ViolationKind, Option<(usize, usize)>)> = BTreeMap::new();
    for (&(i, j), b) in &setup.edge_barriers {
        kinds.insert(b.label.clone(), (ViolationKind::TaskBarrier, Some((i, j))));
    }
    for &(i, j) in &setup.graph.edges {
        kinds.insert(comm_label(i, j), (ViolationKind::Communication, Some((i, j))));
    }
    let ids: Vec<usize> = setup.models.keys().copied().collect();
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            kinds.insert(collision_label(i, j), (ViolationKind::Collision, None));
        }
        for o in 0..cfg.obstacles.len() {
            kinds.insert(obstacle_label(i, o), (ViolationKind::Obstacle, None));
        }
    }
    let independent: Vec<String> = setup.independent.values().map(|b| b.label.clone()).collect();

    let mut minima: BTreeMap<String, BarrierMinimum> = BTreeMap::new();
    let mut flagged: BTreeMap<String, bool> = BTreeMap::new();
    let mut record = |label: &str, value: f64, t: f64, step: usize, violations: &mut Vec<Violation>, notes: &mut Vec<String>| {
        let m = minima.entry(label.to_string()).or_insert(BarrierMinimum { value, t, step });
        if value < m.value || value.is_nan() {
            *m = BarrierMinimum { value, t, step };
        }
        if value >= -INVARIANT_TOL {
            return;
        }
        if flagged.insert(label.to_string(), true).is_some() {
            return;
        }
        match kinds.get(label) {
            Some(&(kind, edge)) => {
                let binding = match (kind, edge) {
                    (ViolationKind::TaskBarrier, Some((i, j))) => edge_tier_a(i, j, step),
                    (ViolationKind::Communication, Some((i, j))) => edge_tier_ab(i, j, step),
                    _ => true,
                };
                if binding {
                    violations.push(Violation { kind, label: label.to_string(), step, t, value });
                } else {
                    notes.push(format!("{label} = {value:.3e} at t = {t:.3} after a tier fallback"));
                }
            }
            None if independent.iter().any(|l| l == label) => {
                notes.push(format!("independent barrier {label} = {value:.3e} at t = {t:.3}"));
            }
            None => {}
        }
    };

    for s in samples(trace) {
        let states: BTreeMap<usize, Vec<f64>> = s.states.iter().map(|(i, x)| (*i, (*x).clone())).collect();
        let mut values = setup.barrier_values(&states, s.t, false);
        if s.left {
            for (k, v) in setup.barrier_values(&states, s.t, true) {
                let e = values.entry(k).or_insert(v);
                *e = e.min(v);
            }
        }
        for (label, v) in values {
            record(&label, v, s.t, s.step, &mut violations, &mut notes);
        }
    }
    for (idx, s) in trace.steps.iter().enumerate() {
        for (label, &v) in &s.barriers {
            record(label, v, s.t, idx, &mut violations, &mut notes);
        }
    }

    let mut gamma_min: BTreeMap<usize, f64> = BTreeMap::new();
    let mut tier_counts: BTreeMap<usize, BTreeMap<String, usize>> = BTreeMap::new();
    let mut max_reduction_rounds = 0;
    for (idx, s) in trace.steps.iter().enumerate() {
        max_reduction_rounds = max_reduction_rounds.max(s.rounds);
        for (&i, a) in &s.agents {
            let g = gamma_min.entry(i).or_insert(f64::INFINITY);
            *g = g.min(a.gamma);
            *tier_counts.entry(i).or_default().entry(format!("{:?}", a.tier)).or_default() += 1;
            if !(a.gamma > 0.0 && a.gamma <= 1.0) {
                violations.push(Violation { kind: ViolationKind::Gamma, label: format!("gamma({i})"), step: idx, t: s.t, value: a.gamma });
            }
        }
    }

    let round_bound = setup.graph.diameter.div_ceil(2) + 1;
    if trace.token_rounds > round_bound {
        violations.push(Violation { kind: ViolationKind::Rounds, label: "tokens".into(), step: 0, t: 0.0, value: trace.token_rounds as f64 });
    }
    if let Err(e) = trace.tokens.check(&setup.graph) {
        notes.push(format!("token assignment: {e}"));
        violations.push(Violation { kind: ViolationKind::Tokens, label: "tokens".into(), step: 0, t: 0.0, value: 0.0 });
    }

    let tier_a_edges =
        setup.edge_barriers.iter().map(|(&(i, j), b)| (b.label.clone(), edge_tier_a(i, j, trace.steps.len().saturating_sub(1)))).collect();
    if let Some(h) = &trace.halted {
        notes.push(format!("run halted: {h}"));
    }

    Ok(InvariantReport {
        steps: trace.steps.len(),
        final_time: trace.final_time,
        verdicts: task_verdicts(setup, trace)?,
        minima,
        violations,
        notes,
        gamma_min,
        token_rounds: trace.token_rounds,
        round_bound,
        max_reduction_rounds,
        tier_a_edges,
        tier_counts,
        halted: trace.halted.clone(),
    })
}

/// Rebuilds the barriers from the embedded configuration and checks the trace.
pub fn check_trace(trace: &SimulationTrace) -> Result<InvariantReport, SimError> {
    check_invariants(trace, &Setup::for_monitoring(&trace.config)?)
}
