//! Agent models with input-affine dynamics `x' = f(x) + g(x) u`, zero-order-hold
//! integration and reachable-set over-approximation by norm balls.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for input-set membership.
pub const INPUT_TOL: f64 = 1e-9;

/// Number of boundary points used when inflating a reach ball for
/// state-dependent vector fields.
const REACH_BOUNDARY_SAMPLES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("input {input:?} lies outside the admissible input set (excess {excess:.3e})")]
    InputOutsideSet { input: Vec<f64>, excess: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid input set: {0}")]
    InvalidInputSet(String),
    #[error("integration step must be positive with at least one substep (dt={dt}, substeps={substeps})")]
    InvalidStep { dt: f64, substeps: usize },
}

/// Geometry of an unscaled input set. Both shapes are compact, convex and
/// must contain the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputShape {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    NormBall { dim: usize, radius: f64 },
}

/// Whether a linear functional should be minimized or maximized over a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Min,
    Max,
}

/// An input set `scale * U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSet {
    pub shape: InputShape,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl InputSet {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DynamicsError> {
        let set = Self { shape: InputShape::Box { lo, hi }, scale: 1.0 };
        set.validate()?;
        Ok(set)
    }

    /// Symmetric box `[-bound_k, bound_k]` per axis.
    pub fn symmetric_box(bounds: &[f64]) -> Result<Self, DynamicsError> {
        Self::boxed(bounds.iter().map(|b| -b).collect(), bounds.to_vec())
    }

    pub fn ball(dim: usize, radius: f64) -> Result<Self, DynamicsError> {
        let set = Self { shape: InputShape::NormBall { dim, radius }, scale: 1.0 };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(DynamicsError::InvalidInputSet(format!("scale {} must be finite and nonnegative", self.scale)));
        }
        match &self.shape {
            InputShape::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(DynamicsError::InvalidInputSet("box bounds must be nonempty and of equal length".into()));
                }
                for (l, h) in lo.iter().zip(hi) {
                    if !(l.is_finite() && h.is_finite()) || *l > 0.0 || *h < 0.0 {
                        return Err(DynamicsError::InvalidInputSet(format!(
                            "box axis [{l}, {h}] must be finite and contain 0"
                        )));
                    }
                }
            }
            InputShape::NormBall { dim, radius } => {
                if *dim == 0 || !(radius.is_finite() && *radius >= 0.0) {
                    return Err(DynamicsError::InvalidInputSet(format!(
                        "ball needs dim > 0 and finite radius >= 0 (dim={dim}, radius={radius})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            InputShape::Box { lo, .. } => lo.len(),
            InputShape::NormBall { dim, .. } => *dim,
        }
    }

    /// The set `gamma * self`.
    pub fn scaled(&self, gamma: f64) -> Self {
        Self { shape: self.shape.clone(), scale: self.scale * gamma }
    }

    /// The same geometry with scale reset to one.
    pub fn unscaled(&self) -> Self {
        Self { shape: self.shape.clone(), scale: 1.0 }
    }

    /// Amount by which `u` violates the set (zero when inside).
    pub fn excess(&self, u: &[f64]) -> f64 {
        match &self.shape {
            InputShape::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .zip(u)
                .map(|((l, h), v)| (self.scale * l - v).max(v - self.scale * h).max(0.0))
                .fold(0.0, f64::max),
            InputShape::NormBall { radius, .. } => (norm(u) - self.scale * radius).max(0.0),
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.len() == self.dim() && self.excess(u) <= tol
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        match &self.shape {
            InputShape::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| v.clamp(self.scale * l, self.scale * h))
                .collect(),
            InputShape::NormBall { radius, .. } => {
                let r = self.scale * radius;
                let n = norm(u);
                if n <= r {
                    u.to_vec()
                } else {
                    u.iter().map(|v| v * r / n).collect()
                }
            }
        }
    }

    /// An optimizer of `c . u` over the set. Coordinates (box) or directions
    /// (ball) on which `c` vanishes resolve to zero.
    pub fn support_point(&self, c: &[f64], sense: Sense) -> Vec<f64> {
        let sign = match sense {
            Sense::Max => 1.0,
            Sense::Min => -1.0,
        };
        match &self.shape {
            InputShape::Box { lo, hi } => c
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(ck, (l, h))| {
                    let d = sign * ck;
                    if d > 0.0 {
                        self.scale * h
                    } else if d < 0.0 {
                        self.scale * l
                    } else {
                        0.0
                    }
                })
                .collect(),
            InputShape::NormBall { radius, .. } => {
                let n = norm(c);
                if n == 0.0 {
                    vec![0.0; c.len()]
                } else {
                    c.iter().map(|ck| sign * self.scale * radius * ck / n).collect()
                }
            }
        }
    }

    /// `min_u c . u` (or max) over the set.
    pub fn extreme_value(&self, c: &[f64], sense: Sense) -> f64 {
        dot(c, &self.support_point(c, sense))
    }

    /// Largest Euclidean norm of an element.
    pub fn max_norm(&self) -> f64 {
        match &self.shape {
            InputShape::Box { lo, hi } => {
                self.scale * lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs()).powi(2)).sum::<f64>().sqrt()
            }
            InputShape::NormBall { radius, .. } => self.scale * radius,
        }
    }

    /// `true` when `U = -U`.
    pub fn is_symmetric(&self) -> bool {
        match &self.shape {
            InputShape::Box { lo, hi } => lo.iter().zip(hi).all(|(l, h)| (l + h).abs() <= 1e-15),
            InputShape::NormBall { .. } => true,
        }
    }

    /// Vertices of a box set; `None` for a ball.
    pub fn vertices(&self) -> Option<Vec<Vec<f64>>> {
        let InputShape::Box { lo, hi } = &self.shape else {
            return None;
        };
        let m = lo.len();
        Some(
            (0..1usize << m)
                .map(|mask| {
                    (0..m)
                        .map(|k| if mask >> k & 1 == 1 { self.scale * hi[k] } else { self.scale * lo[k] })
                        .collect()
                })
                .collect(),
        )
    }
}

/// Axis-aligned compact state region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl StateBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// The box widened by `fraction` of its width on each side.
    pub fn inflated(&self, fraction: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let w = (h - l) * fraction;
                (l - w, h + w)
            })
            .unzip();
        Self { lo, hi }
    }
}

/// Rows of a selection matrix `S`, stored as the selected state coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionSelector {
    indices: Vec<usize>,
}

impl PositionSelector {
    pub fn new(indices: Vec<usize>, state_dim: usize) -> Result<Self, DynamicsError> {
        let mut seen = vec![false; state_dim];
        for &i in &indices {
            if i >= state_dim || seen[i] {
                return Err(DynamicsError::InvalidModel(format!(
                    "selector indices {indices:?} must be unique and below {state_dim}"
                )));
            }
            seen[i] = true;
        }
        if indices.is_empty() {
            return Err(DynamicsError::InvalidModel("selector must pick at least one coordinate".into()));
        }
        Ok(Self { indices })
    }

    /// Validates a 0/1 matrix with one unit entry per row and at most one per column.
    pub fn from_matrix(s: &DMatrix<f64>) -> Result<Self, DynamicsError> {
        let mut indices = Vec::with_capacity(s.nrows());
        for r in 0..s.nrows() {
            let ones: Vec<usize> = (0..s.ncols()).filter(|&c| s[(r, c)] == 1.0).collect();
            let zeros = (0..s.ncols()).filter(|&c| s[(r, c)] == 0.0).count();
            if ones.len() != 1 || zeros + 1 != s.ncols() {
                return Err(DynamicsError::InvalidModel(format!("row {r} of the selection matrix is not a unit row")));
            }
            indices.push(ones[0]);
        }
        Self::new(indices, s.ncols())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn matrix(&self, state_dim: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.indices.len(), state_dim);
        for (r, &c) in self.indices.iter().enumerate() {
            s[(r, c)] = 1.0;
        }
        s
    }

    pub fn select(&self, x: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| x[i]).collect()
    }
}

type DriftFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type InputMatrixFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// User-supplied vector fields.
#[derive(Clone)]
pub struct CustomDynamics {
    pub drift: Arc<DriftFn>,
    pub input_matrix: Arc<InputMatrixFn>,
}

impl fmt::Debug for CustomDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomDynamics { .. }")
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    /// `p' = u`.
    SingleIntegrator,
    /// Look-ahead point of a unicycle; state `(p_x, p_y, theta)`, input `(v, omega)`.
    DifferentialDrive { look_ahead: f64 },
    Custom(CustomDynamics),
}

#[derive(Debug, Clone)]
pub struct AgentModel {
    pub id: usize,
    pub state_dim: usize,
    pub kind: ModelKind,
    pub input_set: InputSet,
    pub state_box: StateBox,
    pub selector: PositionSelector,
}

/// Result of one zero-order-hold interval.
#[derive(Debug, Clone)]
pub struct ZohStep {
    pub state: DVector<f64>,
    /// Intermediate states after each substep (last entry equals `state`).
    pub substates: Vec<DVector<f64>>,
    /// Set when the trajectory left the 10%-inflated state box.
    pub escaped: bool,
}

/// Euclidean ball `{ y : |y - center| <= radius }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl ReachBall {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius >= 0.0, "reach ball radius must be nonnegative");
        Self { center, radius }
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        let d: f64 = y.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        d <= self.radius + tol
    }

    /// Over-approximation of `R_i (-) R_j` in relative coordinates.
    pub fn relative(center: Vec<f64>, self_radius: f64, peer_radius: f64) -> Self {
        Self::new(center, self_radius + peer_radius)
    }
}

impl AgentModel {
    pub fn single_integrator(id: usize, dim: usize, input_set: InputSet) -> Result<Self, DynamicsError> {
        let model = Self {
            id,
            state_dim: dim,
            kind: ModelKind::SingleIntegrator,
            input_set,
            state_box: StateBox { lo: vec![-1e3; dim], hi: vec![1e3; dim] },
            selector: PositionSelector::new((0..dim).collect(), dim)?,
        };
        model.validate_structure()?;
        Ok(model)
    }

    pub fn differential_drive(id: usize, look_ahead: f64, input_set: InputSet) -> Result<Self, DynamicsError> {
        let model = Self {
            id,
            state_dim: 3,
            kind: ModelKind::DifferentialDrive { look_ahead },
            input_set,
            state_box: StateBox { lo: vec![-1e3, -1e3, -1e3], hi: vec![1e3, 1e3, 1e3] },
            selector: PositionSelector::new(vec![0, 1], 3)?,
        };
        model.validate_structure()?;
        Ok(model)
    }

    pub fn custom(
        id: usize,
        state_dim: usize,
        dynamics: CustomDynamics,
        input_set: InputSet,
        state_box: StateBox,
        selector: PositionSelector,
    ) -> Result<Self, DynamicsError> {
        let model = Self { id, state_dim, kind: ModelKind::Custom(dynamics), input_set, state_box, selector };
        model.validate_structure()?;
        Ok(model)
    }

    pub fn with_state_box(mut self, state_box: StateBox) -> Result<Self, DynamicsError> {
        self.state_box = state_box;
        self.validate_structure()?;
        Ok(self)
    }

    fn validate_structure(&self) -> Result<(), DynamicsError> {
        self.input_set.validate()?;
        if self.state_box.lo.len() != self.state_dim || self.state_box.hi.len() != self.state_dim {
            return Err(DynamicsError::InvalidModel("state box dimension mismatch".into()));
        }
        if self.state_box.lo.iter().zip(&self.state_box.hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(DynamicsError::InvalidModel("state box must be compact".into()));
        }
        if self.selector.indices().iter().any(|&i| i >= self.state_dim) {
            return Err(DynamicsError::InvalidModel("selector exceeds state dimension".into()));
        }
        match &self.kind {
            ModelKind::SingleIntegrator => {
                if self.input_set.dim() != self.state_dim {
                    return Err(DynamicsError::InvalidModel("single integrator needs input dim == state dim".into()));
                }
            }
            ModelKind::DifferentialDrive { look_ahead } => {
                if !(look_ahead.is_finite() && *look_ahead > 0.0) {
                    return Err(DynamicsError::InvalidModel(format!("look-ahead {look_ahead} must be positive")));
                }
                if self.state_dim != 3 || self.input_set.dim() != 2 {
                    return Err(DynamicsError::InvalidModel("differential drive is 3 states / 2 inputs".into()));
                }
            }
            ModelKind::Custom(_) => {}
        }
        Ok(())
    }

    /// Structural checks plus a sampled check that `f` and `g` are finite on
    /// the state box and have bounded finite-difference slopes.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        self.validate_structure()?;
        let probe = self.drift(&DVector::from_column_slice(&self.state_box.lo));
        if probe.len() != self.state_dim {
            return Err(DynamicsError::DimensionMismatch { expected: self.state_dim, got: probe.len() });
        }
        let g = self.input_matrix(&DVector::from_column_slice(&self.state_box.lo));
        if g.nrows() != self.state_dim || g.ncols() != self.input_set.dim() {
            return Err(DynamicsError::InvalidModel(format!(
                "input matrix is {}x{}, expected {}x{}",
                g.nrows(),
                g.ncols(),
                self.state_dim,
                self.input_set.dim()
            )));
        }
        let samples = 64;
        let mut prev: Option<(DVector<f64>, DVector<f64>, DMatrix<f64>)> = None;
        let mut max_slope = 0.0f64;
        for k in 0..samples {
            let x = DVector::from_iterator(
                self.state_dim,
                (0..self.state_dim).map(|d| {
                    let s = crate::solvers::halton(k + 1, d);
                    self.state_box.lo[d] + s * (self.state_box.hi[d] - self.state_box.lo[d])
                }),
            );
            let f = self.drift(&x);
            let g = self.input_matrix(&x);
            if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
                return Err(DynamicsError::InvalidModel(format!("non-finite dynamics at {:?}", x.as_slice())));
            }
            if let Some((px, pf, pg)) = &prev {
                let dx = (&x - px).norm();
                if dx > 0.0 {
                    max_slope = max_slope.max(((&f - pf).norm() + (&g - pg).norm()) / dx);
                }
            }
            prev = Some((x, f, g));
        }
        if !max_slope.is_finite() {
            return Err(DynamicsError::InvalidModel("unbounded finite-difference slope".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_set.dim()
    }

    pub fn position_dim(&self) -> usize {
        self.selector.dim()
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ModelKind::SingleIntegrator | ModelKind::DifferentialDrive { .. } => DVector::zeros(self.state_dim),
            ModelKind::Custom(c) => (c.drift)(x),
        }
    }

    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            ModelKind::SingleIntegrator => DMatrix::identity(self.state_dim, self.state_dim),
            ModelKind::DifferentialDrive { look_ahead } => {
                let (s, c) = x[2].sin_cos();
                let l = *look_ahead;
                DMatrix::from_row_slice(3, 2, &[c, l * s, -s, l * c, 0.0, 1.0])
            }
            ModelKind::Custom(c) => (c.input_matrix)(x),
        }
    }

    /// State coordinates on which `f` or `g` depend.
    pub fn varying_coords(&self) -> Vec<usize> {
        match &self.kind {
            ModelKind::SingleIntegrator => Vec::new(),
            ModelKind::DifferentialDrive { .. } => vec![2],
            ModelKind::Custom(_) => (0..self.state_dim).collect(),
        }
    }

    /// `f(x) + g(x) u` without input-set checks.
    pub fn velocity(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.input_matrix(x) * u
    }

    /// `f(x) + g(x) u`, rejecting inputs outside the (scaled) input set.
    pub fn eval_dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        if x.len() != self.state_dim {
            return Err(DynamicsError::DimensionMismatch { expected: self.state_dim, got: x.len() });
        }
        if u.len() != self.input_dim() {
            return Err(DynamicsError::DimensionMismatch { expected: self.input_dim(), got: u.len() });
        }
        let excess = self.input_set.excess(u.as_slice());
        if excess > INPUT_TOL {
            return Err(DynamicsError::InputOutsideSet { input: u.as_slice().to_vec(), excess });
        }
        Ok(self.velocity(x, u))
    }

    pub fn position(&self, x: &[f64]) -> Vec<f64> {
        self.selector.select(x)
    }

    /// Rows of `S f(x)`.
    pub fn position_drift(&self, x: &DVector<f64>) -> Vec<f64> {
        let f = self.drift(x);
        self.selector.indices().iter().map(|&i| f[i]).collect()
    }

    /// `S g(x)` as a `position_dim x input_dim` matrix.
    pub fn position_input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let g = self.input_matrix(x);
        let idx = self.selector.indices();
        DMatrix::from_fn(idx.len(), g.ncols(), |r, c| g[(idx[r], c)])
    }

    /// Fixed-step RK4 over `[0, dt]` with the input held constant.
    pub fn integrate_zoh(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        dt: f64,
        substeps: usize,
    ) -> Result<ZohStep, DynamicsError> {
        if !(dt > 0.0) || substeps == 0 {
            return Err(DynamicsError::InvalidStep { dt, substeps });
        }
        if x.len() != self.state_dim {
            return Err(DynamicsError::DimensionMismatch { expected: self.state_dim, got: x.len() });
        }
        if u.len() != self.input_dim() {
            return Err(DynamicsError::DimensionMismatch { expected: self.input_dim(), got: u.len() });
        }
        let h = dt / substeps as f64;
        let guard = self.state_box.inflated(0.1);
        let mut state = x.clone();
        let mut substates = Vec::with_capacity(substeps);
        let mut escaped = !guard.contains(state.as_slice());
        for _ in 0..substeps {
            let k1 = self.velocity(&state, u);
            let k2 = self.velocity(&(&state + &k1 * (h / 2.0)), u);
            let k3 = self.velocity(&(&state + &k2 * (h / 2.0)), u);
            let k4 = self.velocity(&(&state + &k3 * h), u);
            state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            escaped |= !guard.contains(state.as_slice());
            substates.push(state.clone());
        }
        Ok(ZohStep { state, substates, escaped })
    }

    /// `sup_{u in U} |f(y) + g(y) u|` (exact for boxes, a tight upper bound for balls).
    fn speed_bound(&self, y: &DVector<f64>) -> f64 {
        let f = self.drift(y);
        let g = self.input_matrix(y);
        let set = self.input_set.unscaled();
        match set.vertices() {
            Some(vertices) => vertices
                .iter()
                .map(|v| (&f + &g * DVector::from_column_slice(v)).norm())
                .fold(0.0, f64::max),
            None => {
                let sigma = g.singular_values().iter().copied().fold(0.0, f64::max);
                f.norm() + sigma * set.max_norm()
            }
        }
    }

    /// Ball containing every state reachable from `x` within `dt` under any
    /// constant input from the unscaled input set.
    pub fn reachable_overapprox(&self, x: &[f64], dt: f64) -> ReachBall {
        if dt <= 0.0 {
            return ReachBall::new(x.to_vec(), 0.0);
        }
        let center = DVector::from_column_slice(x);
        let rho0 = dt * self.speed_bound(&center);
        let mut bound = self.speed_bound(&center);
        if rho0 > 0.0 && !self.varying_coords().is_empty() {
            for dir in sphere_directions(self.state_dim, REACH_BOUNDARY_SAMPLES) {
                let y = &center + DVector::from_vec(dir) * rho0;
                bound = bound.max(self.speed_bound(&y));
            }
        }
        ReachBall::new(x.to_vec(), dt * bound)
    }
}

/// Deterministic, roughly uniform unit directions in `R^n`.
pub fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(count);
    for axis in 0..n {
        for sign in [1.0, -1.0] {
            if dirs.len() == count {
                return dirs;
            }
            let mut d = vec![0.0; n];
            d[axis] = sign;
            dirs.push(d);
        }
    }
    let mut k = 1;
    while dirs.len() < count {
        let v: Vec<f64> = (0..n).map(|d| 2.0 * crate::solvers::halton(k, d) - 1.0).collect();
        let nv = norm(&v);
        if nv > 1e-6 {
            dirs.push(v.iter().map(|c| c / nv).collect());
        }
        k += 1;
    }
    dirs
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
