//! Scenario files.
//!
//! ```json
//! {
//!   "name": "pair",
//!   "dt": 0.1,
//!   "horizon": 20.0,
//!   "comm_radius": 8.5,
//!   "agents": [
//!     { "id": 1, "model": { "kind": "single_integrator" }, "input": { "ball": 0.9 }, "initial": [0, 0] },
//!     { "id": 2, "model": { "kind": "differential_drive", "look_ahead": 0.1 },
//!       "input": { "box": [0.6, 0.15] }, "initial": [3, 0, 0] }
//!   ],
//!   "tasks": ["F[5,10] ball(e12; c=(2,0), r=1) & G[0,inf] comm(e12; r=8.5)"],
//!   "obstacles": [ { "center": [5, 5], "radius": 1 } ]
//! }
//! ```
//!
//! Optional keys: `sensing_radius` (defaults to `comm_radius`), `barrier`
//! (`eta`, `margin_fraction`, `lambda`, `chi`), `safety_lambda`, `substeps`,
//! `audit_lambda`, `margin` (`seeds`, `iterations`), `nu_cache`, and per agent
//! `collision_radius` (default 0.25).

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentModel, InputSet};
use crate::stl::{parse_task, BarrierParams, StlFormula, StlTask, TaskOwner};

use super::SimError;

pub const DEFAULT_COLLISION_RADIUS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    SingleIntegrator {
        #[serde(default = "two")]
        dim: usize,
    },
    DifferentialDrive {
        look_ahead: f64,
    },
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// Euclidean ball of the given radius.
    Ball(f64),
    /// Symmetric box `|u_k| <= bound_k`.
    Box(Vec<f64>),
    Bounds { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: usize,
    pub model: ModelSpec,
    pub input: InputSpec,
    pub initial: Vec<f64>,
    #[serde(default = "default_collision_radius")]
    pub collision_radius: f64,
}

fn default_collision_radius() -> f64 {
    DEFAULT_COLLISION_RADIUS
}

impl AgentSpec {
    pub fn build_model(&self) -> Result<AgentModel, SimError> {
        let input_dim = match &self.model {
            ModelSpec::SingleIntegrator { dim } => *dim,
            ModelSpec::DifferentialDrive { .. } => 2,
        };
        let set = match &self.input {
            InputSpec::Ball(r) => InputSet::ball(input_dim, *r),
            InputSpec::Box(b) => InputSet::symmetric_box(b),
            InputSpec::Bounds { lo, hi } => InputSet::boxed(lo.clone(), hi.clone()),
        }
        .map_err(|e| SimError::Config(format!("agent {}: {e}", self.id)))?;
        let model = match &self.model {
            ModelSpec::SingleIntegrator { dim } => AgentModel::single_integrator(self.id, *dim, set),
            ModelSpec::DifferentialDrive { look_ahead } => AgentModel::differential_drive(self.id, *look_ahead, set),
        }
        .map_err(|e| SimError::Config(format!("agent {}: {e}", self.id)))?;
        if self.initial.len() != model.state_dim {
            return Err(SimError::Config(format!(
                "agent {}: initial state has {} entries, model needs {}",
                self.id,
                self.initial.len(),
                model.state_dim
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskSpec {
    Text(String),
    Labeled { formula: String, label: String },
}

impl TaskSpec {
    pub fn formula(&self) -> &str {
        match self {
            TaskSpec::Text(s) => s,
            TaskSpec::Labeled { formula, .. } => formula,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            TaskSpec::Text(_) => None,
            TaskSpec::Labeled { label, .. } => Some(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierOverrides {
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_margin")]
    pub margin_fraction: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "d_chi")]
    pub chi: f64,
}

fn d_eta() -> f64 {
    10.0
}
fn d_margin() -> f64 {
    0.1
}
fn one() -> f64 {
    1.0
}
fn d_chi() -> f64 {
    0.01
}

impl Default for BarrierOverrides {
    fn default() -> Self {
        Self { eta: d_eta(), margin_fraction: d_margin(), lambda: one(), chi: d_chi() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSettings {
    #[serde(default = "d_seeds")]
    pub seeds: usize,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
}

fn d_seeds() -> usize {
    17
}
fn d_iterations() -> usize {
    100
}

impl Default for MarginSettings {
    fn default() -> Self {
        Self { seeds: d_seeds(), iterations: d_iterations() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub dt: f64,
    pub horizon: f64,
    pub comm_radius: f64,
    #[serde(default)]
    pub sensing_radius: Option<f64>,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub barrier: BarrierOverrides,
    #[serde(default = "one")]
    pub safety_lambda: f64,
    #[serde(default = "d_substeps")]
    pub substeps: usize,
    #[serde(default = "yes")]
    pub audit_lambda: bool,
    #[serde(default)]
    pub margin: MarginSettings,
    #[serde(default)]
    pub nu_cache: Option<PathBuf>,
}

fn d_substeps() -> usize {
    10
}
fn yes() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(cache), Some(dir)) = (&cfg.nu_cache, path.parent()) {
            if cache.is_relative() {
                cfg.nu_cache = Some(dir.join(cache));
            }
        }
        Ok(cfg)
    }

    pub fn sensing(&self) -> f64 {
        self.sensing_radius.unwrap_or(self.comm_radius)
    }

    pub fn barrier_params(&self) -> BarrierParams {
        BarrierParams {
            eta: self.barrier.eta,
            margin_fraction: self.barrier.margin_fraction,
            lambda: self.barrier.lambda,
            chi: self.barrier.chi,
            dt: self.dt,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    pub fn agent(&self, id: usize) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Parses every task and merges tasks on the same argument into one conjunction.
    pub fn merged_tasks(&self, position_dim: usize) -> Result<Vec<StlTask>, SimError> {
        let mut by_owner: BTreeMap<TaskOwner, (Vec<StlFormula>, Vec<String>)> = BTreeMap::new();
        for spec in &self.tasks {
            let task = parse_task(spec.formula(), position_dim).map_err(|e| SimError::Config(format!("task '{}': {e}", spec.formula())))?;
            let entry = by_owner.entry(task.owner).or_default();
            entry.0.push(task.formula);
            if let Some(l) = spec.label() {
                entry.1.push(l.to_string());
            }
        }
        Ok(by_owner
            .into_iter()
            .map(|(owner, (mut formulas, labels))| {
                let formula = if formulas.len() == 1 { formulas.pop().unwrap() } else { StlFormula::And(formulas) };
                let task = StlTask::new(owner, formula);
                if labels.is_empty() {
                    task
                } else {
                    task.with_label(labels.join("+"))
                }
            })
            .collect())
    }

    /// Structural checks that do not need the models.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be finite and nonnegative, got {}", self.horizon));
        }
        if !(self.comm_radius > 0.0) || !(self.sensing() > 0.0) {
            return bad("communication and sensing radii must be positive".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1".into());
        }
        if self.agents.is_empty() {
            return bad("no agents".into());
        }
        let ids: BTreeSet<usize> = self.agents.iter().map(|a| a.id).collect();
        if ids.len() != self.agents.len() {
            return bad("duplicate agent ids".into());
        }
        for a in &self.agents {
            if !(a.collision_radius >= 0.0) {
                return bad(format!("agent {}: negative collision radius", a.id));
            }
        }
        for o in &self.obstacles {
            if !(o.radius > 0.0) {
                return bad("obstacle radius must be positive".into());
            }
        }
        Ok(())
    }
}
