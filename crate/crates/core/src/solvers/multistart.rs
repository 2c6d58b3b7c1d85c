//! Deterministic multi-start projected-gradient minimization over products
//! of intervals and Euclidean balls.

use thiserror::Error;

use super::halton;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultistartError {
    #[error("objective was non-finite at every seed")]
    AllSeedsSkipped,
    #[error("empty domain")]
    EmptyDomain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainBlock {
    Interval { lo: f64, hi: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl DomainBlock {
    fn dim(&self) -> usize {
        match self {
            DomainBlock::Interval { .. } => 1,
            DomainBlock::Ball { center, .. } => center.len(),
        }
    }

    fn extent(&self) -> f64 {
        match self {
            DomainBlock::Interval { lo, hi } => hi - lo,
            DomainBlock::Ball { radius, .. } => 2.0 * radius,
        }
    }

    fn project(&self, x: &mut [f64]) {
        match self {
            DomainBlock::Interval { lo, hi } => x[0] = x[0].clamp(*lo, *hi),
            DomainBlock::Ball { center, radius } => {
                let d: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
                if d > *radius {
                    for (a, c) in x.iter_mut().zip(center) {
                        *a = c + (*a - c) * radius / d;
                    }
                }
            }
        }
    }

    /// Maps a point of the unit cube onto the block (radial stretch for balls).
    fn from_unit(&self, s: &[f64], out: &mut [f64]) {
        match self {
            DomainBlock::Interval { lo, hi } => out[0] = lo + s[0] * (hi - lo),
            DomainBlock::Ball { center, radius } => {
                let v: Vec<f64> = s.iter().map(|t| 2.0 * t - 1.0).collect();
                let inf = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
                let two = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let k = if two > 0.0 { inf / two } else { 0.0 };
                for ((o, c), a) in out.iter_mut().zip(center).zip(&v) {
                    *o = c + radius * k * a;
                }
            }
        }
    }

    fn center(&self, out: &mut [f64]) {
        match self {
            DomainBlock::Interval { lo, hi } => out[0] = 0.5 * (lo + hi),
            DomainBlock::Ball { center, .. } => out.copy_from_slice(center),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProductDomain {
    pub blocks: Vec<DomainBlock>,
}

impl ProductDomain {
    pub fn new(blocks: Vec<DomainBlock>) -> Self {
        Self { blocks }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(vec![DomainBlock::Interval { lo, hi }])
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(DomainBlock::dim).sum()
    }

    pub fn extent(&self) -> f64 {
        self.blocks.iter().map(DomainBlock::extent).fold(0.0, f64::max)
    }

    pub fn project(&self, x: &mut [f64]) {
        let mut off = 0;
        for b in &self.blocks {
            let k = b.dim();
            b.project(&mut x[off..off + k]);
            off += k;
        }
    }

    pub fn center(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        let mut off = 0;
        for b in &self.blocks {
            let k = b.dim();
            b.center(&mut x[off..off + k]);
            off += k;
        }
        x
    }

    /// The `index`-th low-discrepancy point of the domain (index >= 1).
    pub fn halton_point(&self, index: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        let mut off = 0;
        for b in &self.blocks {
            let k = b.dim();
            let s: Vec<f64> = (off..off + k).map(|d| halton(index, d)).collect();
            b.from_unit(&s, &mut x[off..off + k]);
            off += k;
        }
        x
    }

    /// Per-coordinate extent of the owning block.
    fn coordinate_extents(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| std::iter::repeat_n(b.extent(), b.dim())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistartOptions {
    pub seeds: usize,
    pub iterations: usize,
    /// Initial step length as a fraction of the domain extent.
    pub step: f64,
    pub armijo: f64,
    /// Additional starting points tried before the low-discrepancy seeds.
    pub extra_seeds: Vec<Vec<f64>>,
}

impl Default for MultistartOptions {
    fn default() -> Self {
        Self { seeds: 17, iterations: 100, step: 0.1, armijo: 1e-4, extra_seeds: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistartResult {
    pub value: f64,
    pub argmin: Vec<f64>,
    pub evaluations: usize,
    pub skipped_seeds: usize,
}

/// Runs projected-gradient descent (central finite differences, Armijo
/// backtracking) from every seed and returns the best point evaluated.
pub fn multistart_minimize<F>(
    mut objective: F,
    domain: &ProductDomain,
    opts: &MultistartOptions,
) -> Result<MultistartResult, MultistartError>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = domain.dim();
    if domain.blocks.is_empty() {
        return Err(MultistartError::EmptyDomain);
    }
    let extent = domain.extent();
    let coord_ext = domain.coordinate_extents();
    let mut seeds: Vec<Vec<f64>> = opts.extra_seeds.iter().filter(|s| s.len() == n).cloned().collect();
    seeds.push(domain.center());
    seeds.extend((1..opts.seeds.max(1)).map(|k| domain.halton_point(k)));

    let mut best = MultistartResult { value: f64::INFINITY, argmin: Vec::new(), evaluations: 0, skipped_seeds: 0 };
    let mut evals = 0usize;
    // Finite-difference probes may leave the domain, so only `record`ed
    // points compete for the minimum.
    let mut eval = |x: &[f64], best: &mut MultistartResult, evals: &mut usize, record: bool| -> f64 {
        *evals += 1;
        let v = objective(x);
        if record && v.is_finite() && v < best.value {
            best.value = v;
            best.argmin = x.to_vec();
        }
        v
    };

    for mut x in seeds {
        domain.project(&mut x);
        let mut fx = eval(&x, &mut best, &mut evals, true);
        if !fx.is_finite() {
            best.skipped_seeds += 1;
            continue;
        }
        if extent <= 0.0 {
            continue;
        }
        let mut length = opts.step * extent;
        let mut grad = vec![0.0; n];
        for _ in 0..opts.iterations {
            for k in 0..n {
                if coord_ext[k] <= 0.0 {
                    grad[k] = 0.0;
                    continue;
                }
                let h = 1e-6 * coord_ext[k];
                let orig = x[k];
                x[k] = orig + h;
                let fp = eval(&x, &mut best, &mut evals, false);
                x[k] = orig - h;
                let fm = eval(&x, &mut best, &mut evals, false);
                x[k] = orig;
                grad[k] = if fp.is_finite() && fm.is_finite() { (fp - fm) / (2.0 * h) } else { 0.0 };
            }
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm <= 1e-14 {
                break;
            }
            let mut accepted = false;
            while length > 1e-10 * extent {
                let mut trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - length * gi / gnorm).collect();
                domain.project(&mut trial);
                let decrease: f64 = grad.iter().zip(trial.iter().zip(&x)).map(|(g, (t, xi))| g * (t - xi)).sum();
                if decrease >= 0.0 {
                    length *= 0.5;
                    continue;
                }
                let ft = eval(&trial, &mut best, &mut evals, true);
                if ft.is_finite() && ft <= fx + opts.armijo * decrease {
                    x = trial;
                    fx = ft;
                    accepted = true;
                    break;
                }
                length *= 0.5;
            }
            if !accepted {
                break;
            }
            length = (length * 2.0).min(opts.step * extent);
        }
    }
    best.evaluations = evals;
    if best.argmin.is_empty() {
        return Err(MultistartError::AllSeedsSkipped);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn convex_parabola() {
        let r = multistart_minimize(|x| x[0] * x[0], &ProductDomain::interval(-1.0, 1.0), &Default::default()).unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cosine_global_minimum() {
        let f = |x: &[f64]| (3.0 * PI * x[0]).cos();
        let r = multistart_minimize(f, &ProductDomain::interval(0.0, 1.0), &Default::default()).unwrap();
        let grid = (0..=100_000).map(|k| f(&[k as f64 / 100_000.0])).fold(f64::INFINITY, f64::min);
        assert!(r.value <= grid + 1e-9, "{} vs grid {}", r.value, grid);
        assert_abs_diff_eq!(r.value, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_objective() {
        let r = multistart_minimize(|_| 3.5, &ProductDomain::interval(-2.0, 5.0), &Default::default()).unwrap();
        assert_eq!(r.value, 3.5);
    }

    #[test]
    fn ball_block_boundary_optimum() {
        let domain = ProductDomain::new(vec![DomainBlock::Ball { center: vec![1.0, 1.0], radius: 0.5 }]);
        let r = multistart_minimize(|x| x[0] + 2.0 * x[1], &domain, &Default::default()).unwrap();
        assert_abs_diff_eq!(r.value, 3.0 - 0.5 * 5f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn non_finite_seeds_are_skipped() {
        let f = |x: &[f64]| if x[0] > 0.6 { f64::NAN } else { x[0] };
        let r = multistart_minimize(f, &ProductDomain::interval(0.0, 1.0), &Default::default()).unwrap();
        assert!(r.skipped_seeds > 0);
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-9);
        let err = multistart_minimize(|_| f64::NAN, &ProductDomain::interval(0.0, 1.0), &Default::default());
        assert_eq!(err.unwrap_err(), MultistartError::AllSeedsSkipped);
    }

    #[test]
    fn never_worse_than_any_seed() {
        let domain = ProductDomain::new(vec![
            DomainBlock::Interval { lo: -1.0, hi: 2.0 },
            DomainBlock::Ball { center: vec![0.0, 0.0], radius: 1.0 },
        ]);
        let f = |x: &[f64]| (5.0 * x[0]).sin() * (3.0 * x[1]).cos() + 0.1 * x[2];
        let r = multistart_minimize(f, &domain, &Default::default()).unwrap();
        assert!(r.value <= f(&domain.center()));
        for k in 1..17 {
            assert!(r.value <= f(&domain.halton_point(k)));
        }
    }
}
