//! Margin functions: inter-sample variation bounds for independent barriers,
//! their per-agent split for edge barriers, and offline constants for the
//! collision and communication barriers.
//!
//! All programs minimize over the input analytically: the objective is affine
//! in `u`, so its minimum over a box or ball is a support-function evaluation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{sphere_directions, AgentModel, InputShape, ModelKind, ReachBall, Sense};
use crate::solvers::{multistart_minimize, DomainBlock, MultistartError, MultistartOptions, ProductDomain};
use crate::stl::BarrierFunction;

#[derive(Debug, Error)]
pub enum MarginError {
    #[error("non-finite margin objective: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Multistart(#[from] MultistartError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("margin cache: {0}")]
    Cache(String),
}

/// Which endpoint of an edge `(i, j)`, `i < j`, an agent is. The edge
/// argument is `p_i - p_j`, so the barrier gradient enters with sign `+1`
/// for the first endpoint and `-1` for the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSide {
    First,
    Second,
}

impl EdgeSide {
    pub fn sign(self) -> f64 {
        match self {
            EdgeSide::First => 1.0,
            EdgeSide::Second => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginBundle {
    pub lambda: f64,
    pub nu: f64,
    pub upsilon_self: Option<f64>,
    pub upsilon_peer: Option<f64>,
    pub zeta: f64,
    pub chi: f64,
}

/// `lambda b + d_t b + nu` at `(z, t)`.
pub fn compute_zeta(b: &BarrierFunction, nu: f64, z: &[f64], t: f64) -> f64 {
    let (value, _, dt) = b.eval(z, t);
    b.lambda * value + dt + nu
}

pub fn combine_nu(upsilon_i: f64, upsilon_j: f64) -> f64 {
    upsilon_i + upsilon_j
}

/// `(sign * grad' S f(x), sign * grad' S g(x))` for one agent.
pub fn agent_lie(model: &AgentModel, x: &DVector<f64>, grad: &[f64], sign: f64) -> (f64, Vec<f64>) {
    let sf = model.position_drift(x);
    let sg = model.position_input_matrix(x);
    let lf = sign * grad.iter().zip(&sf).map(|(a, b)| a * b).sum::<f64>();
    let lg = (0..sg.ncols()).map(|c| sign * (0..sg.nrows()).map(|r| grad[r] * sg[(r, c)]).sum::<f64>()).collect();
    (lf, lg)
}

fn min_over_inputs(model: &AgentModel, c: &[f64]) -> f64 {
    model.input_set.unscaled().extreme_value(c, Sense::Min)
}

/// Fixes `tau = t_k` when the barrier is a single term that is affine in
/// time over the sampling interval: the objective is then nondecreasing in `tau`.
fn time_block(b: &BarrierFunction, t_k: f64, dt: f64) -> Option<DomainBlock> {
    if b.single_active(t_k) && b.affine_in_time_on(t_k, t_k + dt) {
        None
    } else {
        Some(DomainBlock::Interval { lo: t_k, hi: t_k + dt * (1.0 - 1e-9) })
    }
}

fn finish(value: f64, what: &str) -> Result<f64, MarginError> {
    if value.is_finite() {
        Ok(value.min(0.0))
    } else {
        Err(MarginError::NonFinite(what.into()))
    }
}

/// Online variation bound for an independent barrier of one agent.
pub fn compute_nu_independent(
    b: &BarrierFunction,
    model: &AgentModel,
    x: &[f64],
    t_k: f64,
    dt: f64,
    opts: &MultistartOptions,
) -> Result<f64, MarginError> {
    if dt <= 0.0 {
        return Ok(0.0);
    }
    let reach = model.reachable_overapprox(x, dt);
    nu_independent_in_ball(b, model, &reach, t_k, dt, opts)
}

pub fn nu_independent_in_ball(
    b: &BarrierFunction,
    model: &AgentModel,
    reach: &ReachBall,
    t_k: f64,
    dt: f64,
    opts: &MultistartOptions,
) -> Result<f64, MarginError> {
    let x = &reach.center;
    if x.len() != model.state_dim || b.dim != model.position_dim() {
        return Err(MarginError::Dimension(format!("state {} / barrier {} for agent {}", x.len(), b.dim, model.id)));
    }
    if dt <= 0.0 {
        return Ok(0.0);
    }
    let xv = DVector::from_column_slice(x);
    let z = model.position(x);
    let (b0, grad0, db0) = b.eval(&z, t_k);
    let (lf0, lg0) = agent_lie(model, &xv, &grad0, 1.0);
    let n = model.state_dim;
    let tau_block = time_block(b, t_k, dt);
    let objective = |v: &[f64]| {
        let xbar = DVector::from_column_slice(&v[..n]);
        let tau = if tau_block.is_some() { v[n] } else { t_k };
        let zbar = model.position(xbar.as_slice());
        let (b1, grad1, db1) = b.eval(&zbar, tau);
        let (lf1, lg1) = agent_lie(model, &xbar, &grad1, 1.0);
        let c: Vec<f64> = lg0.iter().zip(&lg1).map(|(a, c)| a - c).collect();
        lf0 - lf1 + min_over_inputs(model, &c) + db0 - db1 + b.lambda * (b0 - b1)
    };
    let mut blocks = vec![DomainBlock::Ball { center: x.clone(), radius: reach.radius }];
    blocks.extend(tau_block.clone());
    let r = multistart_minimize(objective, &ProductDomain::new(blocks), opts)?;
    finish(r.value, "independent variation")
}

/// One endpoint's share of the variation bound of an edge barrier.
#[derive(Debug, Clone)]
pub struct UpsilonInput<'a> {
    pub barrier: &'a BarrierFunction,
    pub side: EdgeSide,
    pub model: &'a AgentModel,
    pub state: &'a [f64],
    /// Own reach radius, bounding the drift of state-dependent coordinates.
    pub self_radius: f64,
    /// Relative reach ball centred at `p_i - p_j` with radius `rho_i + rho_j`.
    pub relative: &'a ReachBall,
    pub t_k: f64,
    pub dt: f64,
}

pub fn compute_upsilon(input: &UpsilonInput<'_>, opts: &MultistartOptions) -> Result<f64, MarginError> {
    let UpsilonInput { barrier: b, side, model, state, self_radius, relative, t_k, dt } = *input;
    if dt <= 0.0 {
        return Ok(0.0);
    }
    if state.len() != model.state_dim || relative.center.len() != b.dim || b.dim != model.position_dim() {
        return Err(MarginError::Dimension(format!("edge barrier for agent {}", model.id)));
    }
    let sign = side.sign();
    // With a symmetric input set the side sign can be moved into `u`, which
    // makes the two endpoints' programs identical for identical agents.
    let input_sign = if model.input_set.is_symmetric() { sign } else { 1.0 };
    let x0 = DVector::from_column_slice(state);
    let z0 = &relative.center;
    let (b0, grad0, db0) = b.eval(z0, t_k);
    let (lf0, lg0) = agent_lie(model, &x0, &grad0, sign);
    let varying = model.varying_coords();
    let d = b.dim;
    let tau_block = time_block(b, t_k, dt);
    let objective = |v: &[f64]| {
        let zbar = &v[..d];
        let mut xbar = x0.clone();
        for (k, &c) in varying.iter().enumerate() {
            xbar[c] = v[d + k];
        }
        let tau = if tau_block.is_some() { v[d + varying.len()] } else { t_k };
        let (b1, grad1, db1) = b.eval(zbar, tau);
        let (lf1, lg1) = agent_lie(model, &xbar, &grad1, sign);
        let c: Vec<f64> = lg0.iter().zip(&lg1).map(|(a, c)| input_sign * (a - c)).collect();
        lf0 - lf1 + min_over_inputs(model, &c) + 0.5 * (b.lambda * (b0 - b1) + db0 - db1)
    };
    let mut blocks = vec![DomainBlock::Ball { center: z0.clone(), radius: relative.radius }];
    for &c in &varying {
        blocks.push(DomainBlock::Interval { lo: state[c] - self_radius, hi: state[c] + self_radius });
    }
    blocks.extend(tau_block.clone());
    let r = multistart_minimize(objective, &ProductDomain::new(blocks), opts)?;
    finish(r.value, "edge variation share")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyKind {
    /// `|p|^2 - R^2`.
    Collision,
    /// `R^2 - |p|^2`.
    Communication,
}

impl SafetyKind {
    pub fn value(self, radius: f64, p: &[f64]) -> f64 {
        let sq: f64 = p.iter().map(|a| a * a).sum();
        match self {
            SafetyKind::Collision => sq - radius * radius,
            SafetyKind::Communication => radius * radius - sq,
        }
    }

    pub fn gradient(self, p: &[f64]) -> Vec<f64> {
        let s = match self {
            SafetyKind::Collision => 2.0,
            SafetyKind::Communication => -2.0,
        };
        p.iter().map(|a| s * a).collect()
    }

    fn tag(self) -> &'static str {
        match self {
            SafetyKind::Collision => "collision",
            SafetyKind::Communication => "communication",
        }
    }
}

/// Inputs of an offline program for one pair of agents.
#[derive(Debug, Clone)]
pub struct OfflineNuSpec<'a> {
    pub kind: SafetyKind,
    pub model_i: &'a AgentModel,
    pub model_j: &'a AgentModel,
    /// Representative states; only their state-independent coordinates are used.
    pub state_i: &'a [f64],
    pub state_j: &'a [f64],
    /// `r_i + r_j` for collision, `r_c` for communication.
    pub radius: f64,
    /// Radius of the relative-position domain (sensing or communication range).
    pub domain_radius: f64,
    pub dt: f64,
    pub lambda: f64,
}

pub const OFFLINE_GRID_PER_AXIS: usize = 41;
pub const OFFLINE_ANGLE_GRID: usize = 9;
const OFFLINE_DIRECTIONS: usize = 16;
const OFFLINE_REFINE_CELLS: usize = 5;

fn model_signature(m: &AgentModel) -> String {
    let kind = match &m.kind {
        ModelKind::SingleIntegrator => "si".to_string(),
        ModelKind::DifferentialDrive { look_ahead } => format!("dd(l={look_ahead})"),
        ModelKind::Custom(_) => format!("custom#{}", m.id),
    };
    let set = match &m.input_set.shape {
        InputShape::Box { lo, hi } => format!("box{lo:?}{hi:?}x{}", m.input_set.scale),
        InputShape::NormBall { dim, radius } => format!("ball{dim}r{radius}x{}", m.input_set.scale),
    };
    format!("{kind}/{set}").replace(' ', "")
}

impl OfflineNuSpec<'_> {
    pub fn cache_key(&self) -> String {
        format!(
            "{}|{}|{}|R={}|D={}|dt={}|lambda={}",
            self.kind.tag(),
            model_signature(self.model_i),
            model_signature(self.model_j),
            self.radius,
            self.domain_radius,
            self.dt,
            self.lambda
        )
    }
}

struct PairSide<'a> {
    model: &'a AgentModel,
    base: DVector<f64>,
    varying: Vec<usize>,
    angle_range: Vec<(f64, f64)>,
    rho: f64,
    sign: f64,
}

impl PairSide<'_> {
    fn state(&self, values: &[f64]) -> DVector<f64> {
        let mut x = self.base.clone();
        for (k, &c) in self.varying.iter().enumerate() {
            x[c] = values[k];
        }
        x
    }

    fn term(&self, grad0: &[f64], grad1: &[f64], v0: &[f64], v1: &[f64]) -> f64 {
        let x0 = self.state(v0);
        let x1 = self.state(v1);
        let (lf0, lg0) = agent_lie(self.model, &x0, grad0, self.sign);
        let (lf1, lg1) = agent_lie(self.model, &x1, grad1, self.sign);
        let c: Vec<f64> = lg0.iter().zip(&lg1).map(|(a, b)| a - b).collect();
        lf0 - lf1 + min_over_inputs(self.model, &c)
    }
}

fn side<'a>(model: &'a AgentModel, state: &[f64], dt: f64, sign: f64) -> PairSide<'a> {
    let varying = model.varying_coords();
    let angle_range = varying
        .iter()
        .map(|&c| match model.kind {
            ModelKind::DifferentialDrive { .. } => (-PI, PI),
            _ => (model.state_box.lo[c], model.state_box.hi[c]),
        })
        .collect();
    PairSide {
        model,
        base: DVector::from_column_slice(state),
        varying,
        angle_range,
        rho: model.reachable_overapprox(state, dt).radius,
        sign,
    }
}

/// Cartesian product of per-axis value lists.
fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect()
    })
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Offline constant for a safety barrier: dense grid over the relative
/// position domain, its reach-ball offsets and the state-dependent input
/// directions, refined by local descent from the best cells.
pub fn offline_nu(spec: &OfflineNuSpec<'_>) -> Result<f64, MarginError> {
    if spec.dt <= 0.0 {
        return Ok(0.0);
    }
    let d = spec.model_i.position_dim();
    if spec.model_j.position_dim() != d {
        return Err(MarginError::Dimension("agents with different position dimensions".into()));
    }
    let si = side(spec.model_i, spec.state_i, spec.dt, 1.0);
    let sj = side(spec.model_j, spec.state_j, spec.dt, -1.0);
    let rho = si.rho + sj.rho;
    let (kind, big_r, lambda) = (spec.kind, spec.radius, spec.lambda);
    let (ni, nj) = (si.varying.len(), sj.varying.len());
    // Layout: p (d) | offset (d) | angles_i | angles_j | angle offsets_i | angle offsets_j
    let eval = |v: &[f64]| -> f64 {
        let p = &v[..d];
        let pbar: Vec<f64> = p.iter().zip(&v[d..2 * d]).map(|(a, o)| a + o).collect();
        let g0 = kind.gradient(p);
        let g1 = kind.gradient(&pbar);
        let mut k = 2 * d;
        let ai = &v[k..k + ni];
        k += ni;
        let aj = &v[k..k + nj];
        k += nj;
        let abar_i: Vec<f64> = ai.iter().zip(&v[k..k + ni]).map(|(a, o)| a + o).collect();
        k += ni;
        let abar_j: Vec<f64> = aj.iter().zip(&v[k..k + nj]).map(|(a, o)| a + o).collect();
        si.term(&g0, &g1, ai, &abar_i) + sj.term(&g0, &g1, aj, &abar_j) + lambda * (kind.value(big_r, p) - kind.value(big_r, &pbar))
    };

    let per_axis = if d <= 2 { OFFLINE_GRID_PER_AXIS } else { 11 };
    let positions: Vec<Vec<f64>> = product(&vec![linspace(-spec.domain_radius, spec.domain_radius, per_axis); d])
        .into_iter()
        .filter(|p| p.iter().map(|a| a * a).sum::<f64>().sqrt() <= spec.domain_radius * (1.0 + 1e-12))
        .collect();
    let mut offsets = vec![vec![0.0; d]];
    for dir in sphere_directions(d, if d == 1 { 2 } else { OFFLINE_DIRECTIONS }) {
        for frac in [0.5, 1.0] {
            offsets.push(dir.iter().map(|a| a * frac * rho).collect());
        }
    }
    let angle_count = if ni + nj <= 2 { OFFLINE_ANGLE_GRID } else { 3 };
    let mut angle_axes: Vec<Vec<f64>> = Vec::new();
    for s in [&si, &sj] {
        for &(lo, hi) in &s.angle_range {
            angle_axes.push(linspace(lo, hi, angle_count));
        }
    }
    let angle_points = product(&angle_axes);
    let mut shift_axes: Vec<Vec<f64>> = Vec::new();
    for s in [&si, &sj] {
        for _ in 0..s.varying.len() {
            shift_axes.push(vec![-s.rho, 0.0, s.rho]);
        }
    }
    let shift_points = product(&shift_axes);

    let mut best: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut v = vec![0.0; 2 * d + 2 * (ni + nj)];
    for p in &positions {
        v[..d].copy_from_slice(p);
        for off in &offsets {
            v[d..2 * d].copy_from_slice(off);
            for ang in &angle_points {
                v[2 * d..2 * d + ni + nj].copy_from_slice(ang);
                for sh in &shift_points {
                    v[2 * d + ni + nj..].copy_from_slice(sh);
                    let val = eval(&v);
                    if !val.is_finite() {
                        return Err(MarginError::NonFinite("offline grid".into()));
                    }
                    if best.len() < OFFLINE_REFINE_CELLS || val < best[best.len() - 1].0 {
                        best.push((val, v.clone()));
                        best.sort_by(|a, b| a.0.total_cmp(&b.0));
                        best.truncate(OFFLINE_REFINE_CELLS);
                    }
                }
            }
        }
    }
    let grid_min = best.first().map_or(0.0, |b| b.0);

    // Local refinement: the offset lives in a ball, angles in intervals.
    let mut blocks = vec![DomainBlock::Ball { center: vec![0.0; d], radius: spec.domain_radius }];
    blocks.push(DomainBlock::Ball { center: vec![0.0; d], radius: rho });
    for s in [&si, &sj] {
        for &(lo, hi) in &s.angle_range {
            blocks.push(DomainBlock::Interval { lo, hi });
        }
    }
    for s in [&si, &sj] {
        for _ in 0..s.varying.len() {
            blocks.push(DomainBlock::Interval { lo: -s.rho, hi: s.rho });
        }
    }
    let opts = MultistartOptions { seeds: 1, extra_seeds: best.iter().map(|b| b.1.clone()).collect(), ..Default::default() };
    let refined = multistart_minimize(eval, &ProductDomain::new(blocks), &opts)?;
    finish(grid_min.min(refined.value), "offline safety variation")
}

/// Offline constants keyed by program inputs, persisted as `key = value` lines.
#[derive(Debug, Clone, Default)]
pub struct NuCache {
    entries: BTreeMap<String, f64>,
    path: Option<PathBuf>,
    dirty: bool,
}

impl NuCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; later `save` calls write back to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MarginError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| MarginError::Cache(e.to_string()))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .rsplit_once('=')
                    .ok_or_else(|| MarginError::Cache(format!("line {}: expected key = value", n + 1)))?;
                let v: f64 = v.trim().parse().map_err(|_| MarginError::Cache(format!("line {}: bad number", n + 1)))?;
                entries.insert(k.trim().to_string(), v);
            }
        }
        Ok(Self { entries, path: Some(path), dirty: false })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get_or_compute(&mut self, spec: &OfflineNuSpec<'_>) -> Result<f64, MarginError> {
        let key = spec.cache_key();
        if let Some(v) = self.entries.get(&key) {
            return Ok(*v);
        }
        let v = offline_nu(spec)?;
        self.entries.insert(key, v);
        self.dirty = true;
        Ok(v)
    }

    /// Writes the file if anything was computed since it was opened.
    pub fn save(&self) -> Result<(), MarginError> {
        let Some(path) = self.path.as_ref().filter(|_| self.dirty) else {
            return Ok(());
        };
        let mut out = String::from("# offline variation constants\n");
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v:e}");
        }
        let err = |e: std::io::Error| MarginError::Cache(e.to_string());
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, out).map_err(err)?;
        std::fs::rename(&tmp, path).map_err(err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::InputSet;
    use crate::stl::{BarrierParams, Interval, Predicate, StlFormula, StlTask, TaskOwner};
    use approx::assert_abs_diff_eq;

    fn si(id: usize, dim: usize, r: f64) -> AgentModel {
        AgentModel::single_integrator(id, dim, InputSet::ball(dim, r).unwrap()).unwrap()
    }

    fn stationary(owner: TaskOwner, p: Predicate, z0: &[f64]) -> BarrierFunction {
        let f = StlFormula::Always(Interval::new(0.0, f64::INFINITY).unwrap(), p);
        BarrierFunction::build(&StlTask::new(owner, f), z0, 0.0, &BarrierParams::default()).unwrap()
    }

    #[test]
    fn zeta_arithmetic() {
        let b = stationary(TaskOwner::Independent(1), Predicate::ball(vec![0.0], 2.0).unwrap(), &[0.0]);
        // b(z) = 4 - z^2 = 2 at z = sqrt 2.
        assert_abs_diff_eq!(compute_zeta(&b, -0.3, &[2f64.sqrt()], 0.0), 1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(compute_zeta(&b, 0.0, &[2f64.sqrt()], 0.0), 2.0, epsilon = 1e-12);
        assert_eq!(combine_nu(-0.2, -0.3), -0.5);
    }

    #[test]
    fn degenerate_sampling_gives_zero() {
        let b = stationary(TaskOwner::Independent(1), Predicate::ball(vec![0.0], 1.0).unwrap(), &[0.5]);
        let m = si(1, 1, 0.9);
        assert_eq!(compute_nu_independent(&b, &m, &[0.5], 0.0, 0.0, &Default::default()).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_quadratic_closed_form() {
        // b = 1 - x^2 at x = 0.5, |u| <= 0.9, dt = 0.1, lambda = 1:
        // objective(xb, u) = 2(xb - x) u + xb^2 - x^2; the minimum is at xb = x - 0.09.
        let b = stationary(TaskOwner::Independent(1), Predicate::ball(vec![0.0], 1.0).unwrap(), &[0.5]);
        let nu = compute_nu_independent(&b, &si(1, 1, 0.9), &[0.5], 0.0, 0.1, &Default::default()).unwrap();
        let expected = -2.0 * 0.09 * 0.9 + 0.41f64.powi(2) - 0.25;
        assert_abs_diff_eq!(nu, expected, epsilon = 1e-6);
        assert_abs_diff_eq!(nu, -0.2439, epsilon = 1e-4);
    }

    #[test]
    fn identical_agents_split_equally() {
        let b = stationary(TaskOwner::Collaborative(1, 2), Predicate::communication(2, 8.5).unwrap(), &[3.0, 1.0]);
        let (mi, mj) = (si(1, 2, 0.9), si(2, 2, 0.9));
        let rel = ReachBall::new(vec![3.0, 1.0], 0.18);
        let opts = MultistartOptions::default();
        let ui = compute_upsilon(
            &UpsilonInput { barrier: &b, side: EdgeSide::First, model: &mi, state: &[0.0, 0.0], self_radius: 0.09, relative: &rel, t_k: 0.0, dt: 0.1 },
            &opts,
        )
        .unwrap();
        let uj = compute_upsilon(
            &UpsilonInput { barrier: &b, side: EdgeSide::Second, model: &mj, state: &[-3.0, -1.0], self_radius: 0.09, relative: &rel, t_k: 0.0, dt: 0.1 },
            &opts,
        )
        .unwrap();
        assert!((ui - uj).abs() <= 1e-9, "{ui} vs {uj}");
        assert!(ui < 0.0);
    }

    #[test]
    fn offline_communication_closed_form() {
        // 2 (pb - p).(u_i - u_j) + |pb|^2 - |p|^2 with |p| <= 8.5 and |pb - p| <= 0.18.
        let (mi, mj) = (si(1, 2, 0.9), si(2, 2, 0.9));
        let spec = OfflineNuSpec {
            kind: SafetyKind::Communication,
            model_i: &mi,
            model_j: &mj,
            state_i: &[0.0, 0.0],
            state_j: &[0.0, 0.0],
            radius: 8.5,
            domain_radius: 8.5,
            dt: 0.1,
            lambda: 1.0,
        };
        let v = offline_nu(&spec).unwrap();
        assert_abs_diff_eq!(v, -3.6756, epsilon = 1e-6);
    }

    #[test]
    fn offline_frozen_agents_and_zero_step() {
        let (mi, mj) = (si(1, 2, 0.0), si(2, 2, 0.0));
        let mut spec = OfflineNuSpec {
            kind: SafetyKind::Collision,
            model_i: &mi,
            model_j: &mj,
            state_i: &[0.0, 0.0],
            state_j: &[0.0, 0.0],
            radius: 0.5,
            domain_radius: 8.5,
            dt: 0.1,
            lambda: 1.0,
        };
        assert_eq!(offline_nu(&spec).unwrap(), 0.0);
        let (ai, aj) = (si(1, 2, 0.9), si(2, 2, 0.9));
        spec.model_i = &ai;
        spec.model_j = &aj;
        spec.dt = 0.0;
        assert_eq!(offline_nu(&spec).unwrap(), 0.0);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nu.cache");
        let (mi, mj) = (si(1, 2, 0.9), si(2, 2, 0.9));
        let spec = OfflineNuSpec {
            kind: SafetyKind::Communication,
            model_i: &mi,
            model_j: &mj,
            state_i: &[0.0, 0.0],
            state_j: &[0.0, 0.0],
            radius: 8.5,
            domain_radius: 8.5,
            dt: 0.1,
            lambda: 1.0,
        };
        let mut cache = NuCache::open(&path).unwrap();
        let v = cache.get_or_compute(&spec).unwrap();
        cache.save().unwrap();
        let reloaded = NuCache::open(&path).unwrap();
        assert_eq!(reloaded.get(&spec.cache_key()), Some(v));
    }
}
