//! Decentralized sampled-data barrier-function control for multi-agent
//! systems with acyclic spatio-temporal task dependencies.

pub mod dynamics;
pub mod solvers;
pub mod stl;
pub mod task_graph;
pub mod margins;
pub mod controller;
pub mod sim;

pub use controller::{AgentQp, ControllerError, ControllerTier, QpRow, RowKind};
pub use dynamics::{AgentModel, DynamicsError, InputSet, ReachBall};
pub use margins::{MarginError, NuCache};
pub use sim::{check_invariants, check_trace, run_scenario, InvariantReport, ScenarioConfig, Setup, SimError, SimulationTrace};
pub use stl::{BarrierFunction, StlError, StlFormula, StlTask, TaskOwner};
pub use task_graph::{run_token_passing, TaskGraph, TokenAssignment};
