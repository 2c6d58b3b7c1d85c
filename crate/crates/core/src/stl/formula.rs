use std::fmt;

use serde::{Deserialize, Serialize};

use super::predicate::Predicate;
use super::StlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOwner {
    Independent(usize),
    /// Argument is `p_i - p_j` with `i < j`.
    Collaborative(usize, usize),
}

impl TaskOwner {
    /// Canonical owner for an edge, plus whether the argument had to be flipped.
    pub fn edge(i: usize, j: usize) -> Result<(Self, bool), StlError> {
        if i == j {
            return Err(StlError::Unsupported(format!("collaborative task on self-loop ({i},{i})")));
        }
        Ok(if i < j { (Self::Collaborative(i, j), false) } else { (Self::Collaborative(j, i), true) })
    }

    pub fn agents(&self) -> Vec<usize> {
        match *self {
            Self::Independent(i) => vec![i],
            Self::Collaborative(i, j) => vec![i, j],
        }
    }
}

impl fmt::Display for TaskOwner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Independent(i) => write!(f, "x{i}"),
            Self::Collaborative(i, j) => write!(f, "e({i},{j})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self, StlError> {
        if !(a.is_finite() && a >= 0.0 && b >= a) {
            return Err(StlError::Unsupported(format!("interval [{a}, {b}] needs 0 <= a <= b")));
        }
        Ok(Self { a, b })
    }

    pub fn check_aligned(&self, dt: f64) -> Result<(), StlError> {
        for v in [self.a, self.b] {
            if v.is_finite() && !is_multiple(v, dt) {
                return Err(StlError::Misaligned { value: v, dt });
            }
        }
        Ok(())
    }
}

pub(crate) fn is_multiple(v: f64, dt: f64) -> bool {
    let k = (v / dt).round();
    (v - k * dt).abs() <= 1e-9 * (1.0 + v.abs())
}

#[derive(Debug, Clone)]
pub enum StlFormula {
    Eventually(Interval, Predicate),
    Always(Interval, Predicate),
    And(Vec<StlFormula>),
}

/// One temporal operator applied to one predicate.
#[derive(Debug, Clone)]
pub struct TemporalTerm {
    pub always: bool,
    pub interval: Interval,
    pub predicate: Predicate,
}

impl StlFormula {
    /// Flattens nested conjunctions into the list of temporal terms.
    pub fn terms(&self) -> Result<Vec<TemporalTerm>, StlError> {
        let mut out = Vec::new();
        self.collect(&mut out);
        if out.is_empty() {
            return Err(StlError::Unsupported("empty conjunction".into()));
        }
        let dim = out[0].predicate.dim;
        if out.iter().any(|t| t.predicate.dim != dim) {
            return Err(StlError::Unsupported("conjunction mixes predicates of different dimension".into()));
        }
        Ok(out)
    }

    fn collect(&self, out: &mut Vec<TemporalTerm>) {
        match self {
            Self::Eventually(i, p) => out.push(TemporalTerm { always: false, interval: *i, predicate: p.clone() }),
            Self::Always(i, p) => out.push(TemporalTerm { always: true, interval: *i, predicate: p.clone() }),
            Self::And(list) => list.iter().for_each(|f| f.collect(out)),
        }
    }

    pub fn check_aligned(&self, dt: f64) -> Result<(), StlError> {
        self.terms()?.iter().try_for_each(|t| t.interval.check_aligned(dt))
    }

    /// The same formula over the opposite edge orientation.
    pub fn mirrored(&self) -> Self {
        match self {
            Self::Eventually(i, p) => Self::Eventually(*i, p.mirrored()),
            Self::Always(i, p) => Self::Always(*i, p.mirrored()),
            Self::And(list) => Self::And(list.iter().map(Self::mirrored).collect()),
        }
    }

    /// Latest finite interval endpoint.
    pub fn horizon(&self) -> f64 {
        self.terms()
            .map(|ts| ts.iter().map(|t| if t.interval.b.is_finite() { t.interval.b } else { t.interval.a }).fold(0.0, f64::max))
            .unwrap_or(0.0)
    }
}

/// A formula together with the state argument it constrains.
#[derive(Debug, Clone)]
pub struct StlTask {
    pub owner: TaskOwner,
    pub formula: StlFormula,
    pub label: String,
}

impl StlTask {
    pub fn new(owner: TaskOwner, formula: StlFormula) -> Self {
        Self { label: owner.to_string(), owner, formula }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}
