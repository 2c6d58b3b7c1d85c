//! Closed-loop engine, invariant checks and trace export.

pub mod config;
pub mod engine;
pub mod export;
pub mod invariants;

use thiserror::Error;

use crate::controller::ControllerError;
use crate::dynamics::DynamicsError;
use crate::margins::MarginError;
use crate::stl::StlError;

pub use config::{AgentSpec, BarrierOverrides, InputSpec, MarginSettings, ModelSpec, ObstacleSpec, ScenarioConfig, TaskSpec};
pub use engine::{run_scenario, run_setup, AgentStep, Engine, Setup, SimulationRun, SimulationTrace, StepRecord};
pub use export::{plot_data, summary_json, write_outputs, write_trace_csv};
pub use invariants::{check_invariants, check_trace, InvariantReport, Violation, ViolationKind, INVARIANT_TOL};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Margin(#[from] MarginError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("agent {agent}: no controller tier feasible at t = {t}")]
    Halted { agent: usize, t: f64 },
    #[error("i/o: {0}")]
    Io(String),
}
