//! Discrete-time STL monitor, independent of the barrier encoding.

use serde::{Deserialize, Serialize};

use super::formula::{StlFormula, TemporalTerm};
use super::StlError;

/// Predicate values down to `-MONITOR_TOL` count as satisfied.
pub const MONITOR_TOL: f64 = 1e-6;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    /// Met after the window: first witness `delay` seconds past the deadline
    /// (eventually), or holding from `delay` seconds after the window opened (always).
    SatisfiedLate { delay: f64 },
    Violated,
    /// The window extends past the end of the trace without a witness.
    Undetermined,
}

impl Verdict {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, Verdict::Satisfied)
    }
}

/// Verdict for one temporal term on samples `(times[k], signal[k])`.
pub fn monitor_term(term: &TemporalTerm, times: &[f64], signal: &[Vec<f64>]) -> Verdict {
    let Some(&end) = times.last() else {
        return Verdict::Undetermined;
    };
    let (a, b) = (term.interval.a, term.interval.b);
    let holds = |k: usize| term.predicate.value(&signal[k]) >= -MONITOR_TOL;
    let within = |t: f64, lo: f64, hi: f64| t >= lo - TIME_EPS && t <= hi + TIME_EPS;
    if !term.always {
        if (0..times.len()).any(|k| within(times[k], a, b) && holds(k)) {
            return Verdict::Satisfied;
        }
        if b > end + TIME_EPS {
            return Verdict::Undetermined;
        }
        return match (0..times.len()).find(|&k| times[k] > b + TIME_EPS && holds(k)) {
            Some(k) => Verdict::SatisfiedLate { delay: times[k] - b },
            None => Verdict::Violated,
        };
    }
    if a > end + TIME_EPS {
        return Verdict::Undetermined;
    }
    let window: Vec<usize> = (0..times.len()).filter(|&k| within(times[k], a, b)).collect();
    if window.iter().all(|&k| holds(k)) {
        return Verdict::Satisfied;
    }
    let last = *window.last().expect("window contains the sample at or after a");
    if !holds(last) {
        return Verdict::Violated;
    }
    let mut start = last;
    for &k in window.iter().rev() {
        if !holds(k) {
            break;
        }
        start = k;
    }
    Verdict::SatisfiedLate { delay: times[start] - a }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaVerdict {
    pub overall: Verdict,
    pub terms: Vec<Verdict>,
}

/// Worst verdict over all conjuncts (violated > undetermined > late > satisfied).
pub fn monitor_formula(formula: &StlFormula, times: &[f64], signal: &[Vec<f64>]) -> Result<FormulaVerdict, StlError> {
    if times.len() != signal.len() {
        return Err(StlError::Unsupported("monitor needs one signal sample per time".into()));
    }
    let terms: Vec<Verdict> = formula.terms()?.iter().map(|t| monitor_term(t, times, signal)).collect();
    let overall = if terms.contains(&Verdict::Violated) {
        Verdict::Violated
    } else if terms.contains(&Verdict::Undetermined) {
        Verdict::Undetermined
    } else {
        let delay = terms
            .iter()
            .filter_map(|v| match v {
                Verdict::SatisfiedLate { delay } => Some(*delay),
                _ => None,
            })
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
        match delay {
            Some(delay) => Verdict::SatisfiedLate { delay },
            None => Verdict::Satisfied,
        }
    };
    Ok(FormulaVerdict { overall, terms })
}
