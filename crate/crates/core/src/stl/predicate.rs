//! Concave predicate functions over positions or relative positions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::StlError;
use crate::solvers::halton;

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A user-supplied concave function with its gradient.
#[derive(Clone)]
pub struct CustomPredicate {
    pub name: String,
    pub value: Arc<ScalarFn>,
    pub gradient: Arc<GradFn>,
}

impl fmt::Debug for CustomPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomPredicate({})", self.name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PredicateFamily {
    /// `r^2 - sum_k w_k (z_k - c_k)^2`.
    Ball { center: Vec<f64>, radius: f64, weights: Vec<f64> },
    /// `-ln sum_k exp(a_k . z - b_k)`; nonnegative only where every `a_k . z <= b_k`.
    Polyhedral { rows: Vec<Vec<f64>>, offsets: Vec<f64> },
    /// `r^2 - |z|^2`.
    Communication { radius: f64 },
    #[serde(skip)]
    Custom(CustomPredicate),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Predicate {
    pub dim: usize,
    #[serde(flatten)]
    pub family: PredicateFamily,
}

impl Predicate {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, StlError> {
        let n = center.len();
        Self::weighted_ball(center, radius, vec![1.0; n])
    }

    pub fn weighted_ball(center: Vec<f64>, radius: f64, weights: Vec<f64>) -> Result<Self, StlError> {
        if center.is_empty() || weights.len() != center.len() {
            return Err(StlError::InvalidPredicate("ball center and weights must have equal nonzero length".into()));
        }
        if !(radius.is_finite() && radius > 0.0) || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(StlError::InvalidPredicate(format!("ball needs positive radius and weights (r={radius})")));
        }
        Ok(Self { dim: center.len(), family: PredicateFamily::Ball { center, radius, weights } })
    }

    pub fn polyhedral(rows: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self, StlError> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.len() != offsets.len() || rows.iter().any(|r| r.len() != dim) {
            return Err(StlError::InvalidPredicate("polyhedral rows must be nonempty, equal length, one offset each".into()));
        }
        if rows.iter().flatten().chain(&offsets).any(|v| !v.is_finite()) {
            return Err(StlError::InvalidPredicate("non-finite polyhedral data".into()));
        }
        Ok(Self { dim, family: PredicateFamily::Polyhedral { rows, offsets } })
    }

    pub fn communication(dim: usize, radius: f64) -> Result<Self, StlError> {
        if dim == 0 || !(radius.is_finite() && radius > 0.0) {
            return Err(StlError::InvalidPredicate(format!("communication radius {radius} must be positive")));
        }
        Ok(Self { dim, family: PredicateFamily::Communication { radius } })
    }

    /// Wraps a custom function after a numerical concavity check on `[lo, hi]^dim`.
    pub fn custom(dim: usize, custom: CustomPredicate, lo: f64, hi: f64) -> Result<Self, StlError> {
        let p = Self { dim, family: PredicateFamily::Custom(custom) };
        p.check_concavity(&vec![lo; dim], &vec![hi; dim], 1000)?;
        Ok(p)
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match &self.family {
            PredicateFamily::Ball { center, radius, weights } => {
                radius * radius - z.iter().zip(center).zip(weights).map(|((a, c), w)| w * (a - c).powi(2)).sum::<f64>()
            }
            PredicateFamily::Polyhedral { rows, offsets } => {
                let s: Vec<f64> = rows.iter().zip(offsets).map(|(a, b)| dot(a, z) - b).collect();
                -log_sum_exp(&s)
            }
            PredicateFamily::Communication { radius } => radius * radius - z.iter().map(|a| a * a).sum::<f64>(),
            PredicateFamily::Custom(c) => (c.value)(z),
        }
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        match &self.family {
            PredicateFamily::Ball { center, weights, .. } => {
                z.iter().zip(center).zip(weights).map(|((a, c), w)| -2.0 * w * (a - c)).collect()
            }
            PredicateFamily::Polyhedral { rows, offsets } => {
                let s: Vec<f64> = rows.iter().zip(offsets).map(|(a, b)| dot(a, z) - b).collect();
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut g = vec![0.0; self.dim];
                for (a, wk) in rows.iter().zip(&w) {
                    for (gi, ai) in g.iter_mut().zip(a) {
                        *gi -= wk / total * ai;
                    }
                }
                g
            }
            PredicateFamily::Communication { .. } => z.iter().map(|a| -2.0 * a).collect(),
            PredicateFamily::Custom(c) => (c.gradient)(z),
        }
    }

    /// Largest value of the predicate and a point attaining it, when known in closed form.
    pub fn known_maximum(&self) -> Option<(f64, Vec<f64>)> {
        match &self.family {
            PredicateFamily::Ball { center, radius, .. } => Some((radius * radius, center.clone())),
            PredicateFamily::Communication { radius } => Some((radius * radius, vec![0.0; self.dim])),
            _ => None,
        }
    }

    /// The predicate seen from the opposite edge orientation: `h'(z) = h(-z)`.
    pub fn mirrored(&self) -> Self {
        let family = match &self.family {
            PredicateFamily::Ball { center, radius, weights } => PredicateFamily::Ball {
                center: center.iter().map(|c| -c).collect(),
                radius: *radius,
                weights: weights.clone(),
            },
            PredicateFamily::Polyhedral { rows, offsets } => PredicateFamily::Polyhedral {
                rows: rows.iter().map(|r| r.iter().map(|a| -a).collect()).collect(),
                offsets: offsets.clone(),
            },
            PredicateFamily::Communication { radius } => PredicateFamily::Communication { radius: *radius },
            PredicateFamily::Custom(c) => {
                let (v, g) = (c.value.clone(), c.gradient.clone());
                PredicateFamily::Custom(CustomPredicate {
                    name: format!("mirror({})", c.name),
                    value: Arc::new(move |z: &[f64]| v(&z.iter().map(|a| -a).collect::<Vec<_>>())),
                    gradient: Arc::new(move |z: &[f64]| {
                        g(&z.iter().map(|a| -a).collect::<Vec<_>>()).into_iter().map(|a| -a).collect()
                    }),
                })
            }
        };
        Self { dim: self.dim, family }
    }

    /// Midpoint concavity test on `pairs` deterministic point pairs in the box.
    pub fn check_concavity(&self, lo: &[f64], hi: &[f64], pairs: usize) -> Result<(), StlError> {
        let point = |k: usize, shift: usize| -> Vec<f64> {
            (0..self.dim).map(|d| lo[d] + halton(k, d + shift) * (hi[d] - lo[d])).collect()
        };
        for k in 1..=pairs {
            let x = point(k, 0);
            let y = point(k, self.dim);
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let (hx, hy, hm) = (self.value(&x), self.value(&y), self.value(&mid));
            if !(hx.is_finite() && hy.is_finite() && hm.is_finite()) {
                return Err(StlError::InvalidPredicate(format!("non-finite predicate value near {x:?}")));
            }
            if hm < 0.5 * (hx + hy) - 1e-9 * (1.0 + hx.abs() + hy.abs()) {
                return Err(StlError::InvalidPredicate(format!("predicate is not concave between {x:?} and {y:?}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
