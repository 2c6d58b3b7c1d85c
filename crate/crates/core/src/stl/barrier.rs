//! Compilation of fragment formulas into time-varying barrier functions.
//!
//! Each temporal term contributes `h_k(z) + g_k(t)` where `g_k >= 0` is a
//! linear loosening that starts large enough to contain the initial state and
//! vanishes when the term must hold. Terms are combined with a smooth minimum.
//! Finished terms leave the conjunction at their deadline while others remain,
//! so the zero level set can only grow at those instants.

use serde::{Deserialize, Serialize};

use super::formula::{StlTask, TaskOwner, TemporalTerm};
use super::StlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    /// Smoothing gain of the conjunction.
    pub eta: f64,
    /// Extra initial loosening as a fraction of `|h(z0)|`.
    pub margin_fraction: f64,
    pub lambda: f64,
    pub chi: f64,
    pub dt: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self { eta: 10.0, margin_fraction: 0.1, lambda: 1.0, chi: 0.01, dt: 0.1 }
    }
}

pub const LAMBDA_CAP: f64 = 64.0;

/// `-(1/eta) ln sum_k exp(-eta v_k)`.
pub fn conjoin_smooth_min(values: &[f64], eta: f64) -> f64 {
    assert!(eta > 0.0 && !values.is_empty(), "smooth-min needs eta > 0 and a nonempty list");
    if values.len() == 1 {
        return values[0];
    }
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    m - values.iter().map(|v| (-eta * (v - m)).exp()).sum::<f64>().ln() / eta
}

#[derive(Debug, Clone)]
struct Member {
    term: TemporalTerm,
    gamma0: f64,
    ramp_end: f64,
    drop_at: Option<f64>,
}

impl Member {
    fn loosening(&self, t0: f64, t: f64) -> (f64, f64) {
        if self.gamma0 == 0.0 || t >= self.ramp_end {
            return (0.0, 0.0);
        }
        let slope = self.gamma0 / (self.ramp_end - t0);
        (slope * (self.ramp_end - t), -slope)
    }

    fn active(&self, t: f64, left_limit: bool) -> bool {
        match self.drop_at {
            None => true,
            Some(d) if left_limit => t <= d + 1e-12,
            Some(d) => t < d - 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    pub time_derivative: f64,
}

#[derive(Debug, Clone)]
pub struct BarrierFunction {
    pub owner: TaskOwner,
    pub label: String,
    pub t0: f64,
    pub eta: f64,
    pub lambda: f64,
    pub chi: f64,
    pub dim: usize,
    /// `b(z0, t0) >= 0` held at construction.
    pub anchored: bool,
    /// Time after which the barrier no longer changes.
    pub horizon: f64,
    members: Vec<Member>,
    discontinuities: Vec<f64>,
    kinks: Vec<f64>,
}

impl BarrierFunction {
    pub fn build(task: &StlTask, z0: &[f64], t0: f64, params: &BarrierParams) -> Result<Self, StlError> {
        if !(params.eta > 0.0 && params.lambda > 0.0 && params.chi > 0.0 && params.dt > 0.0) {
            return Err(StlError::Unsupported("barrier parameters must be positive".into()));
        }
        let terms = task.formula.terms()?;
        for t in &terms {
            t.interval.check_aligned(params.dt)?;
        }
        if !super::formula::is_multiple(t0, params.dt) {
            return Err(StlError::Misaligned { value: t0, dt: params.dt });
        }
        let dim = terms[0].predicate.dim;
        if z0.len() != dim {
            return Err(StlError::Unsupported(format!("initial argument has dim {}, predicate dim {dim}", z0.len())));
        }
        // Terms whose window closed before t0 carry no obligation.
        let live: Vec<TemporalTerm> = terms.into_iter().filter(|t| t.interval.b >= t0 || !t.interval.b.is_finite()).collect();
        if live.is_empty() {
            return Err(StlError::Unsupported("every term expired before the start time".into()));
        }
        let k = live.len();
        let latest = live.iter().map(|t| t.interval.b).fold(f64::NEG_INFINITY, f64::max);
        let mut members: Vec<Member> = live
            .into_iter()
            .map(|term| {
                let ramp_end = if term.always || !term.interval.b.is_finite() { term.interval.a } else { term.interval.b };
                let drop_at = (term.interval.b.is_finite() && term.interval.b < latest).then_some(term.interval.b);
                let h0 = term.predicate.value(z0);
                let gamma0 = if ramp_end > t0 {
                    let mut g = (-h0).max(0.0) + params.margin_fraction * h0.abs();
                    if k > 1 {
                        g += (k as f64).ln() / params.eta;
                    }
                    g
                } else {
                    0.0
                };
                Member { term, gamma0, ramp_end, drop_at }
            })
            .collect();
        members.sort_by(|a, b| a.ramp_end.total_cmp(&b.ramp_end));
        let mut discontinuities: Vec<f64> = members.iter().filter_map(|m| m.drop_at).filter(|&d| d > t0).collect();
        discontinuities.sort_by(f64::total_cmp);
        discontinuities.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let mut kinks: Vec<f64> = members.iter().filter(|m| m.gamma0 > 0.0).map(|m| m.ramp_end).collect();
        kinks.sort_by(f64::total_cmp);
        kinks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let horizon = discontinuities.iter().chain(&kinks).copied().fold(t0, f64::max);
        let mut b = Self {
            owner: task.owner,
            label: task.label.clone(),
            t0,
            eta: params.eta,
            lambda: params.lambda,
            chi: params.chi,
            dim,
            anchored: false,
            horizon,
            members,
            discontinuities,
            kinks,
        };
        b.anchored = b.value(z0, t0) >= -1e-12;
        Ok(b)
    }

    fn combine(&self, z: &[f64], t: f64, left_limit: bool, want_grad: bool) -> (BarrierEval, Vec<f64>) {
        let active: Vec<&Member> = self.members.iter().filter(|m| m.active(t, left_limit)).collect();
        let parts: Vec<(f64, f64)> = active
            .iter()
            .map(|m| {
                let (g, gd) = m.loosening(self.t0, t);
                (m.term.predicate.value(z) + g, gd)
            })
            .collect();
        let values: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let value = conjoin_smooth_min(&values, self.eta);
        let m = values.iter().copied().fold(f64::INFINITY, f64::min);
        let raw: Vec<f64> = values.iter().map(|v| (-self.eta * (v - m)).exp()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let time_derivative = weights.iter().zip(&parts).map(|(w, p)| w * p.1).sum();
        let mut gradient = Vec::new();
        if want_grad {
            gradient = vec![0.0; self.dim];
            for (w, mem) in weights.iter().zip(&active) {
                for (g, gk) in gradient.iter_mut().zip(mem.term.predicate.gradient(z)) {
                    *g += w * gk;
                }
            }
        }
        (BarrierEval { value, time_derivative }, gradient)
    }

    pub fn value(&self, z: &[f64], t: f64) -> f64 {
        self.combine(z, t, false, false).0.value
    }

    /// `lim_{s -> t-} b(z, s)`.
    pub fn value_left(&self, z: &[f64], t: f64) -> f64 {
        self.combine(z, t, true, false).0.value
    }

    pub fn gradient(&self, z: &[f64], t: f64) -> Vec<f64> {
        self.combine(z, t, false, true).1
    }

    /// Right time derivative.
    pub fn time_derivative(&self, z: &[f64], t: f64) -> f64 {
        self.combine(z, t, false, false).0.time_derivative
    }

    /// Value, gradient and right time derivative in one pass.
    pub fn eval(&self, z: &[f64], t: f64) -> (f64, Vec<f64>, f64) {
        let (e, g) = self.combine(z, t, false, true);
        (e.value, g, e.time_derivative)
    }

    pub fn discontinuities(&self) -> &[f64] {
        &self.discontinuities
    }

    /// Instants where some loosening term reaches zero.
    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn active_count(&self, t: f64) -> usize {
        self.members.iter().filter(|m| m.active(t, false)).count()
    }

    /// The temporal terms encoded by this barrier.
    pub fn terms(&self) -> Vec<&TemporalTerm> {
        self.members.iter().map(|m| &m.term).collect()
    }

    /// `true` when the time profile is affine on `[lo, hi)` (no kink or drop strictly inside
    /// and no drop at `lo`).
    pub fn affine_in_time_on(&self, lo: f64, hi: f64) -> bool {
        let inside = |t: &f64| *t > lo + 1e-12 && *t < hi - 1e-12;
        !self.kinks.iter().any(inside) && !self.discontinuities.iter().any(inside)
    }

    /// `true` when the barrier is a single term or has no time dependence after `t`.
    pub fn single_active(&self, t: f64) -> bool {
        self.active_count(t) == 1
    }

    /// Concave ascent for a maximizer of `b(., t)` starting from `start`.
    pub fn maximize(&self, t: f64, start: &[f64]) -> (Vec<f64>, f64) {
        let active: Vec<&Member> = self.members.iter().filter(|m| m.active(t, false)).collect();
        if active.len() == 1 {
            if let Some((_, arg)) = active[0].term.predicate.known_maximum() {
                let v = self.value(&arg, t);
                return (arg, v);
            }
        }
        let mut z = start.to_vec();
        let mut v = self.value(&z, t);
        let mut step = 1.0;
        for _ in 0..2000 {
            let g = self.gradient(&z, t);
            let gn = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            if gn < 1e-9 {
                break;
            }
            let mut moved = false;
            while step > 1e-14 {
                let trial: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a + step * b).collect();
                let tv = self.value(&trial, t);
                if tv >= v + 1e-4 * step * gn * gn {
                    z = trial;
                    v = tv;
                    moved = true;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (z, v)
    }

    /// Smallest `lambda` in `{l0, 2 l0, ..., 64}` with `lambda b(z*, t) + d_t b(z*, t) + nu(z*, t, lambda) > chi`
    /// at maximizers `z*` for every audit time. Stores and returns it.
    pub fn audit_lambda<F>(&mut self, times: &[f64], start: &[f64], mut nu: F) -> Result<f64, StlError>
    where
        F: FnMut(&[f64], f64, f64) -> f64,
    {
        let samples: Vec<(Vec<f64>, f64, f64, f64)> = times
            .iter()
            .map(|&t| {
                let (z, v) = self.maximize(t, start);
                let d = self.time_derivative(&z, t);
                (z, t, v, d)
            })
            .collect();
        let mut lambda = self.lambda;
        loop {
            let worst = samples.iter().map(|(z, t, v, d)| lambda * v + d + nu(z, *t, lambda)).fold(f64::INFINITY, f64::min);
            if worst > self.chi {
                self.lambda = lambda;
                return Ok(lambda);
            }
            if lambda >= LAMBDA_CAP {
                return Err(StlError::LambdaCap { label: self.label.clone(), worst });
            }
            lambda = (lambda * 2.0).min(LAMBDA_CAP);
        }
    }
}
