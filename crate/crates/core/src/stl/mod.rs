//! Signal temporal logic fragment: concave predicates, eventually/always
//! operators and conjunctions, compiled to time-varying barrier functions.

pub mod barrier;
pub mod formula;
pub mod monitor;
pub mod parser;
pub mod predicate;

use thiserror::Error;

pub use barrier::{conjoin_smooth_min, BarrierFunction, BarrierParams};
pub use formula::{Interval, StlFormula, StlTask, TaskOwner, TemporalTerm};
pub use monitor::{monitor_formula, monitor_term, FormulaVerdict, Verdict};
pub use parser::parse_task;
pub use predicate::{CustomPredicate, Predicate, PredicateFamily};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StlError {
    #[error("unsupported construct: {0}")]
    Unsupported(String),
    #[error("time {value} is not a multiple of the sampling period {dt}")]
    Misaligned { value: f64, dt: f64 },
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),
    #[error("no lambda up to the cap satisfies the margin floor for '{label}' (worst margin {worst:.4})")]
    LambdaCap { label: String, worst: f64 },
}
