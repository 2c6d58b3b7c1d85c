//! Per-agent sampled-data controller: impacts, control reduction factors,
//! their leaf-to-root propagation, and the tiered quadratic program.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AgentModel, InputSet, InputShape, Sense};
use crate::margins::agent_lie;
use crate::solvers::{solve_qp, QpError, QpProblem, QpStatus};
use crate::stl::BarrierFunction;
use crate::task_graph::{GraphError, RoundBus, TaskGraph, TokenAssignment};

/// Smallest reduction factor handed out when the leader cannot compensate.
pub const GAMMA_MIN: f64 = 1e-3;
/// Input gradients below this norm are treated as vanishing.
pub const DEGENERATE_GRADIENT: f64 = 1e-8;
/// Linear slack weights. Collaborative rows outrank the independent one.
pub const INDEPENDENT_SLACK_COST: f64 = 1e3;
pub const FOLLOWER_SLACK_COST: f64 = 1e4;
/// Relative backoff on the leader row. With a reduced follower the row
/// touches the boundary of the leader's input set.
pub const LEADER_ROW_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("no barrier data for edge ({0},{1})")]
    MissingEdge(usize, usize),
    #[error("no input set for agent {0}")]
    MissingAgent(usize),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("agent {agent}: even the collision-only problem is infeasible at t = {t}")]
    SafetyInfeasible { agent: usize, t: f64 },
}

/// `L_f b` and `L_g b` of one agent for one barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieTerms {
    pub lf: f64,
    pub lg: Vec<f64>,
}

impl LieTerms {
    /// `sign` is `+1` for an independent barrier or the first endpoint of an
    /// edge, `-1` for the second endpoint.
    pub fn evaluate(b: &BarrierFunction, sign: f64, model: &AgentModel, x: &[f64], z: &[f64], t: f64) -> Self {
        let grad = b.gradient(z, t);
        Self::from_gradient(model, x, &grad, sign)
    }

    pub fn from_gradient(model: &AgentModel, x: &[f64], grad: &[f64], sign: f64) -> Self {
        let (lf, lg) = agent_lie(model, &DVector::from_column_slice(x), grad, sign);
        Self { lf, lg }
    }

    pub fn lg_norm(&self) -> f64 {
        self.lg.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn degenerate(&self) -> bool {
        self.lg_norm() < DEGENERATE_GRADIENT
    }

    pub fn apply(&self, u: &[f64]) -> f64 {
        self.lf + self.lg.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactSense {
    Worst,
    Best,
}

impl ImpactSense {
    fn sense(self) -> Sense {
        match self {
            ImpactSense::Worst => Sense::Min,
            ImpactSense::Best => Sense::Max,
        }
    }
}

/// Input of `set` that minimizes or maximizes `lg . u`.
pub fn extreme_input(set: &InputSet, lg: &[f64], sense: Sense) -> Vec<f64> {
    set.support_point(lg, sense)
}

/// `L_f b + gamma (L_g b . u*)` with `u*` the extreme input of the unreduced set.
pub fn impact(lie: &LieTerms, set: &InputSet, gamma: f64, sense: ImpactSense) -> f64 {
    let u = extreme_input(&set.unscaled(), &lie.lg, sense.sense());
    lie.lf + gamma * lie.lg.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
}

pub fn value_function(leader_best: f64, follower_worst: f64, zeta: f64) -> f64 {
    leader_best + follower_worst + zeta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaTilde {
    pub value: f64,
    /// `leader_best + zeta + follower_lf >= 0` held.
    pub assumption_ok: bool,
    pub clamped: bool,
}

/// Largest follower factor for which the leader can still compensate the
/// follower's worst input. `follower_dir` is `L_g b . u_min` over the unreduced set.
pub fn tilde_gamma(leader_best: f64, zeta: f64, follower_lf: f64, follower_dir: f64) -> GammaTilde {
    let slack = leader_best + zeta + follower_lf;
    let assumption_ok = slack >= 0.0;
    if follower_dir >= 0.0 {
        return GammaTilde { value: 1.0, assumption_ok, clamped: false };
    }
    let ratio = -slack / follower_dir;
    if ratio > 0.0 {
        GammaTilde { value: ratio.min(1.0), assumption_ok, clamped: false }
    } else {
        GammaTilde { value: GAMMA_MIN, assumption_ok, clamped: true }
    }
}

/// What each endpoint of an edge computes locally at `t_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideTerms {
    pub lie: LieTerms,
    pub upsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeData {
    /// `lambda b + d_t b` at the current relative state.
    pub base: f64,
    /// Terms of the lower-id endpoint.
    pub first: SideTerms,
    pub second: SideTerms,
}

impl EdgeData {
    fn side(&self, edge: (usize, usize), agent: usize) -> &SideTerms {
        if agent == edge.0 {
            &self.first
        } else {
            &self.second
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub edge: (usize, usize),
    pub leader: usize,
    pub follower: usize,
    pub gamma_leader: f64,
    pub gamma_follower: f64,
    pub best: f64,
    pub worst: f64,
    pub best_input: Vec<f64>,
    pub worst_input: Vec<f64>,
    pub gamma_tilde: f64,
    pub nu: f64,
    pub zeta: f64,
    pub value: f64,
    pub assumption_ok: bool,
    pub clamped: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionOutcome {
    pub gamma: BTreeMap<usize, f64>,
    pub reports: BTreeMap<(usize, usize), ImpactReport>,
    /// Rounds until the last factor was fixed.
    pub rounds: usize,
    /// Message hops including the worst-impact replies.
    pub hops: usize,
    pub diagnostics: Vec<String>,
}

pub struct ReductionProblem<'a> {
    pub graph: &'a TaskGraph,
    pub tokens: &'a TokenAssignment,
    pub input_sets: &'a BTreeMap<usize, InputSet>,
    pub edges: &'a BTreeMap<(usize, usize), EdgeData>,
}

#[derive(Debug, Clone)]
enum Message {
    Best { best: f64, upsilon: f64, gamma: f64, input: Vec<f64> },
    Worst { worst: f64 },
}

fn key(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

/// Leaf-to-root propagation of reduction factors over the round bus.
pub fn run_control_reduction(p: &ReductionProblem<'_>) -> Result<ReductionOutcome, ControllerError> {
    for &(i, j) in &p.graph.edges {
        if !p.edges.contains_key(&(i, j)) {
            return Err(ControllerError::MissingEdge(i, j));
        }
    }
    for &i in &p.graph.vertices {
        if !p.input_sets.contains_key(&i) {
            return Err(ControllerError::MissingAgent(i));
        }
    }
    let mut bus: RoundBus<Message> = RoundBus::new(p.graph);
    let mut gamma: BTreeMap<usize, f64> = BTreeMap::new();
    let mut inbox: BTreeMap<usize, BTreeMap<usize, Message>> = BTreeMap::new();
    let mut reports: BTreeMap<(usize, usize), ImpactReport> = BTreeMap::new();
    let mut diagnostics = Vec::new();
    let mut rounds = 0;
    loop {
        let mut fixed_now = Vec::new();
        for &i in &p.graph.vertices {
            if gamma.contains_key(&i) {
                continue;
            }
            let leaders = p.tokens.get(i).leaders();
            let got = inbox.get(&i);
            if !leaders.iter().all(|l| got.is_some_and(|m| matches!(m.get(l), Some(Message::Best { .. })))) {
                continue;
            }
            let set = &p.input_sets[&i];
            let mut g = 1.0f64;
            for &l in &leaders {
                let Some(Message::Best { best, upsilon, gamma: gl, input }) = got.and_then(|m| m.get(&l)).cloned() else {
                    unreachable!("checked above")
                };
                let e = key(i, l);
                let data = &p.edges[&e];
                let own = data.side(e, i);
                let nu = upsilon + own.upsilon;
                let zeta = data.base + nu;
                let degenerate = own.lie.degenerate();
                let worst_input = if degenerate { vec![0.0; set.dim()] } else { extreme_input(&set.unscaled(), &own.lie.lg, Sense::Min) };
                let dir: f64 = own.lie.lg.iter().zip(&worst_input).map(|(a, b)| a * b).sum();
                let gt = if degenerate {
                    GammaTilde { value: 1.0, assumption_ok: true, clamped: false }
                } else {
                    tilde_gamma(best, zeta, own.lie.lf, dir)
                };
                if !gt.assumption_ok {
                    diagnostics.push(format!(
                        "edge ({},{}): leader {l} cannot compensate follower {i} (best {best:.4e}, zeta {zeta:.4e})",
                        e.0, e.1
                    ));
                }
                g = g.min(gt.value);
                reports.insert(
                    e,
                    ImpactReport {
                        edge: e,
                        leader: l,
                        follower: i,
                        gamma_leader: gl,
                        gamma_follower: f64::NAN,
                        best,
                        worst: f64::NAN,
                        best_input: input,
                        worst_input,
                        gamma_tilde: gt.value,
                        nu,
                        zeta,
                        value: f64::NAN,
                        assumption_ok: gt.assumption_ok,
                        clamped: gt.clamped,
                        degenerate,
                    },
                );
            }
            fixed_now.push((i, g));
        }
        for &(i, g) in &fixed_now {
            gamma.insert(i, g);
            rounds = bus.round();
            let set = &p.input_sets[&i];
            if let Some(j) = p.tokens.get(i).led_edge() {
                let e = key(i, j);
                let own = p.edges[&e].side(e, i);
                let input = extreme_input(&set.unscaled(), &own.lie.lg, Sense::Max);
                let best = impact(&own.lie, set, g, ImpactSense::Best);
                bus.send(i, j, Message::Best { best, upsilon: own.upsilon, gamma: g, input })?;
            }
            for l in p.tokens.get(i).leaders() {
                let e = key(i, l);
                let r = reports.get_mut(&e).expect("report created when the factor was fixed");
                let own = p.edges[&e].side(e, i);
                r.gamma_follower = g;
                r.worst = own.lie.lf + g * own.lie.lg.iter().zip(&r.worst_input).map(|(a, b)| a * b).sum::<f64>();
                r.value = value_function(r.best, r.worst, r.zeta);
                bus.send(i, l, Message::Worst { worst: r.worst })?;
            }
        }
        let all_fixed = gamma.len() == p.graph.vertices.len();
        if all_fixed && !bus.pending() {
            break;
        }
        if fixed_now.is_empty() && !bus.pending() {
            let waiting: Vec<usize> = p.graph.vertices.iter().copied().filter(|i| !gamma.contains_key(i)).collect();
            return Err(GraphError::Deadlock { round: bus.round(), waiting }.into());
        }
        bus.advance();
        for &i in &p.graph.vertices {
            for env in bus.receive(i) {
                if let Message::Worst { worst } = &env.payload {
                    debug_assert_eq!(reports[&key(i, env.from)].worst.to_bits(), worst.to_bits());
                }
                inbox.entry(i).or_default().insert(env.from, env.payload);
            }
        }
    }
    Ok(ReductionOutcome { gamma, reports, rounds, hops: bus.hops(), diagnostics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Leader,
    Follower,
    Independent,
    Communication,
    Collision,
    Obstacle,
}

impl RowKind {
    pub fn slacked(self) -> bool {
        self.slack_cost().is_some()
    }

    pub fn slack_cost(self) -> Option<f64> {
        match self {
            RowKind::Follower => Some(FOLLOWER_SLACK_COST),
            RowKind::Independent => Some(INDEPENDENT_SLACK_COST),
            _ => None,
        }
    }

    fn in_tier(self, tier: ControllerTier) -> bool {
        match tier {
            ControllerTier::A => true,
            ControllerTier::B => matches!(self, RowKind::Communication | RowKind::Collision | RowKind::Obstacle),
            ControllerTier::C => matches!(self, RowKind::Collision | RowKind::Obstacle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ControllerTier {
    A,
    B,
    C,
}

impl ControllerTier {
    pub const ALL: [ControllerTier; 3] = [ControllerTier::A, ControllerTier::B, ControllerTier::C];
}

impl std::fmt::Display for ControllerTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// `lf + lg . u >= bound`, optionally relaxed by a slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpRow {
    pub kind: RowKind,
    pub label: String,
    pub lie: LieTerms,
    pub bound: f64,
}

impl QpRow {
    pub fn leader(label: impl Into<String>, lie: LieTerms, zeta: f64, follower_worst: f64) -> Self {
        let bound = -zeta - follower_worst - LEADER_ROW_TOL * (1.0 + zeta.abs() + follower_worst.abs());
        Self { kind: RowKind::Leader, label: label.into(), lie, bound }
    }

    pub fn follower(label: impl Into<String>, lie: LieTerms, zeta: f64) -> Self {
        Self { kind: RowKind::Follower, label: label.into(), lie, bound: -0.5 * zeta }
    }

    pub fn independent(label: impl Into<String>, lie: LieTerms, zeta: f64) -> Self {
        Self { kind: RowKind::Independent, label: label.into(), lie, bound: -zeta }
    }

    pub fn communication(label: impl Into<String>, lie: LieTerms, zeta: f64) -> Self {
        Self { kind: RowKind::Communication, label: label.into(), lie, bound: -0.5 * zeta }
    }

    pub fn collision(label: impl Into<String>, lie: LieTerms, zeta: f64) -> Self {
        Self { kind: RowKind::Collision, label: label.into(), lie, bound: -0.5 * zeta }
    }

    pub fn obstacle(label: impl Into<String>, lie: LieTerms, zeta: f64) -> Self {
        Self { kind: RowKind::Obstacle, label: label.into(), lie, bound: -zeta }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentQp {
    pub agent: usize,
    /// Already reduced by the agent's factor.
    pub input_set: InputSet,
    pub rows: Vec<QpRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSolution {
    pub input: Vec<f64>,
    pub tier: ControllerTier,
    pub slacks: BTreeMap<String, f64>,
    pub dropped: Vec<String>,
    /// Tiers tried before the selected one.
    pub rejected: Vec<ControllerTier>,
    pub objective: f64,
}

impl AgentQp {
    /// Problem for one tier, with the labels of its slack variables.
    pub fn problem(&self, tier: ControllerTier) -> (QpProblem, Vec<String>, Vec<String>) {
        let m = self.input_set.dim();
        let mut dropped = Vec::new();
        let rows: Vec<&QpRow> = self
            .rows
            .iter()
            .filter(|r| r.kind.in_tier(tier))
            .filter(|r| {
                let keep = !r.lie.degenerate();
                if !keep {
                    dropped.push(r.label.clone());
                }
                keep
            })
            .collect();
        let slack_labels: Vec<String> = rows.iter().filter(|r| r.kind.slacked()).map(|r| r.label.clone()).collect();
        let n = m + slack_labels.len();
        let mut hessian = DMatrix::zeros(n, n);
        for k in 0..m {
            hessian[(k, k)] = 2.0;
        }
        let mut linear = DVector::zeros(n);
        for (k, r) in rows.iter().filter_map(|r| r.kind.slack_cost()).enumerate() {
            linear[m + k] = r;
        }
        let mut a: Vec<Vec<f64>> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut s = m;
        for r in &rows {
            let mut row = vec![0.0; n];
            row[..m].copy_from_slice(&r.lie.lg);
            if r.kind.slacked() {
                row[s] = 1.0;
                s += 1;
            }
            a.push(row);
            b.push(r.bound - r.lie.lf);
        }
        for k in m..n {
            let mut row = vec![0.0; n];
            row[k] = 1.0;
            a.push(row);
            b.push(0.0);
        }
        let scale = self.input_set.scale;
        let ball = match &self.input_set.shape {
            InputShape::Box { lo, hi } => {
                for k in 0..m {
                    let mut row = vec![0.0; n];
                    row[k] = 1.0;
                    a.push(row.clone());
                    b.push(scale * lo[k]);
                    row[k] = -1.0;
                    a.push(row);
                    b.push(-scale * hi[k]);
                }
                None
            }
            InputShape::NormBall { radius, .. } => Some(scale * radius),
        };
        let rows_m = DMatrix::from_fn(a.len(), n, |r, c| a[r][c]);
        let mut problem = QpProblem::new(hessian, linear, rows_m, DVector::from_vec(b));
        if let Some(r) = ball {
            problem = problem.with_ball((0..m).collect(), r);
        }
        (problem, slack_labels, dropped)
    }

    /// First feasible tier in priority order.
    pub fn solve(&self, t: f64) -> Result<AgentSolution, ControllerError> {
        let m = self.input_set.dim();
        let mut rejected = Vec::new();
        for tier in ControllerTier::ALL {
            let (problem, slack_labels, dropped) = self.problem(tier);
            let result = solve_qp(&problem)?;
            if result.status == QpStatus::Infeasible {
                rejected.push(tier);
                continue;
            }
            let mut input: Vec<f64> = result.solution.as_slice()[..m].to_vec();
            if self.input_set.excess(&input) > 0.0 {
                input = self.input_set.project(&input);
            }
            let slacks = slack_labels
                .into_iter()
                .enumerate()
                .map(|(k, l)| (l, result.solution[m + k].max(0.0)))
                .collect();
            return Ok(AgentSolution { input, tier, slacks, dropped, rejected, objective: result.objective });
        }
        Err(ControllerError::SafetyInfeasible { agent: self.agent, t })
    }
}

/// Agents whose factor is fixed before any message arrives.
pub fn unled_agents(graph: &TaskGraph, tokens: &TokenAssignment) -> BTreeSet<usize> {
    graph.vertices.iter().copied().filter(|&i| tokens.get(i).leaders().is_empty()).collect()
}
