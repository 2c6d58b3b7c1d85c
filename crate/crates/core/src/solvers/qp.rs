//! Primal active-set solver for small dense convex QPs
//!
//! ```text
//!     minimize     1/2 x' H x + c' x
//!     subject to   A x >= b
//!                  |x_B| <= r        (optional, on a subset B of coordinates)
//! ```
//!
//! `H` only needs to be positive semidefinite. Feasibility is decided by a
//! phase-1 program before the optimality phase starts.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Threshold on the phase-1 optimum above which a problem is declared infeasible.
pub const INFEASIBILITY_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200;

const FEAS_TOL: f64 = 1e-11;
const MULT_TOL: f64 = 1e-10;
const CURV_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("active-set iteration cap {cap} exceeded (KKT residual {residual:.3e})")]
    IterationLimit { cap: usize, residual: f64 },
    #[error("problem is unbounded below")]
    Unbounded,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// Euclidean-norm bound on a subset of the decision variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallConstraint {
    pub indices: Vec<usize>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub ball: Option<BallConstraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

/// Evidence that `A x >= b` has no solution: `y >= 0`, `A' y ~ 0`, `b' y > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    pub multipliers: DVector<f64>,
    pub residual: f64,
    pub phase1_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: QpStatus,
    pub solution: DVector<f64>,
    pub active_set: Vec<usize>,
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, rows: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        Self { hessian, linear, rows, rhs, ball: None }
    }

    pub fn with_ball(mut self, indices: Vec<usize>, radius: f64) -> Self {
        self.ball = Some(BallConstraint { indices, radius });
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest violation of any row or of the ball bound.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let rows = (&self.rhs - &self.rows * x).iter().copied().fold(0.0, f64::max);
        let ball = self.ball.as_ref().map_or(0.0, |b| (ball_norm(x, &b.indices) - b.radius).max(0.0));
        rows.max(ball)
    }

    fn validate(&self) -> Result<(), QpError> {
        let d = self.dim();
        if self.hessian.nrows() != d || self.hessian.ncols() != d {
            return Err(QpError::InvalidProblem(format!("hessian must be {d}x{d}")));
        }
        if self.rows.ncols() != d || self.rows.nrows() != self.rhs.len() {
            return Err(QpError::InvalidProblem("row matrix and rhs sizes disagree".into()));
        }
        if self.hessian.iter().chain(self.linear.iter()).chain(self.rows.iter()).chain(self.rhs.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::InvalidProblem("non-finite data".into()));
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-9 * (1.0 + self.hessian.amax()) {
            return Err(QpError::InvalidProblem(format!("hessian is not symmetric (asymmetry {asym:.2e})")));
        }
        if let Some(b) = &self.ball {
            if b.indices.iter().any(|&i| i >= d) || !(b.radius >= 0.0 && b.radius.is_finite()) {
                return Err(QpError::InvalidProblem("ball constraint out of range".into()));
            }
        }
        Ok(())
    }
}

fn ball_norm(x: &DVector<f64>, idx: &[usize]) -> f64 {
    idx.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt()
}

/// Solves from a cold start.
pub fn solve_qp(problem: &QpProblem) -> Result<SolveResult, QpError> {
    solve_qp_warm(problem, &[])
}

/// Solves, first trying `warm_active` as the optimal working set.
pub fn solve_qp_warm(problem: &QpProblem, warm_active: &[usize]) -> Result<SolveResult, QpError> {
    problem.validate()?;
    match &problem.ball {
        None => solve_polyhedral(problem, warm_active),
        Some(ball) => solve_with_ball(problem, ball, warm_active),
    }
}

fn solve_polyhedral(problem: &QpProblem, warm_active: &[usize]) -> Result<SolveResult, QpError> {
    let scales = row_scales(&problem.rows);
    if !warm_active.is_empty() {
        if let Some(result) = try_warm(problem, &scales, warm_active) {
            return Ok(result);
        }
    }
    let start = match phase_one(&problem.rows, &problem.rhs, &scales, None)? {
        PhaseOne::Feasible(x) => x,
        PhaseOne::Infeasible(cert) => {
            return Ok(SolveResult {
                status: QpStatus::Infeasible,
                solution: DVector::zeros(problem.dim()),
                active_set: Vec::new(),
                multipliers: DVector::zeros(problem.rhs.len()),
                objective: f64::INFINITY,
                iterations: 0,
                certificate: Some(cert),
            })
        }
    };
    let (x, active, lambda, iterations) = active_set(&problem.hessian, &problem.linear, &problem.rows, &problem.rhs, &scales, start)?;
    Ok(SolveResult {
        status: QpStatus::Optimal,
        objective: problem.objective(&x),
        solution: x,
        active_set: active,
        multipliers: lambda,
        iterations,
        certificate: None,
    })
}

fn row_scales(rows: &DMatrix<f64>) -> Vec<f64> {
    (0..rows.nrows()).map(|i| rows.row(i).norm()).collect()
}

/// Accepts `active` if the equality-constrained optimum on it is primal and dual feasible.
fn try_warm(problem: &QpProblem, scales: &[f64], active: &[usize]) -> Option<SolveResult> {
    let m = problem.rhs.len();
    let mut work: Vec<usize> = Vec::new();
    for &i in active {
        if i < m && scales[i] > 0.0 && !work.contains(&i) {
            work.push(i);
        }
    }
    if work.len() > problem.dim() {
        return None;
    }
    let d = problem.dim();
    let k = work.len();
    let mut kkt = DMatrix::zeros(d + k, d + k);
    let mut rhs = DVector::zeros(d + k);
    kkt.view_mut((0, 0), (d, d)).copy_from(&problem.hessian);
    for (r, &i) in work.iter().enumerate() {
        for c in 0..d {
            kkt[(c, d + r)] = -problem.rows[(i, c)];
            kkt[(d + r, c)] = problem.rows[(i, c)];
        }
        rhs[d + r] = problem.rhs[i];
    }
    rhs.rows_mut(0, d).copy_from(&(-&problem.linear));
    let sol = kkt.lu().solve(&rhs)?;
    let x = sol.rows(0, d).into_owned();
    let lam = sol.rows(d, k).into_owned();
    if sol.iter().any(|v| !v.is_finite()) || lam.iter().any(|&l| l < -MULT_TOL) {
        return None;
    }
    let viol = (0..m).map(|i| (problem.rhs[i] - problem.rows.row(i).dot(&x.transpose())) / scales[i].max(1.0)).fold(0.0, f64::max);
    if viol > 1e-9 {
        return None;
    }
    let mut multipliers = DVector::zeros(m);
    for (r, &i) in work.iter().enumerate() {
        multipliers[i] = lam[r].max(0.0);
    }
    let residual = &problem.hessian * &x + &problem.linear - problem.rows.transpose() * &multipliers;
    if residual.amax() > 1e-8 * (1.0 + problem.linear.amax()) {
        return None;
    }
    Some(SolveResult {
        status: QpStatus::Optimal,
        objective: problem.objective(&x),
        solution: x,
        active_set: work,
        multipliers,
        iterations: 0,
        certificate: None,
    })
}

enum PhaseOne {
    Feasible(DVector<f64>),
    Infeasible(InfeasibilityCertificate),
}

/// Minimizes `t` subject to `a_i' x / |a_i| + t >= b_i / |a_i|`, `t >= 0`.
fn phase_one(
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
    scales: &[f64],
    start: Option<&DVector<f64>>,
) -> Result<PhaseOne, QpError> {
    let (m, d) = rows.shape();
    let x0 = start.cloned().unwrap_or_else(|| DVector::zeros(d));
    let mut zero_rows_violation: f64 = 0.0;
    let mut live = Vec::new();
    for i in 0..m {
        if scales[i] <= 1e-14 {
            zero_rows_violation = zero_rows_violation.max(rhs[i]);
        } else {
            live.push(i);
        }
    }
    if zero_rows_violation > INFEASIBILITY_TOL {
        let culprit = (0..m).find(|&i| scales[i] <= 1e-14 && rhs[i] > INFEASIBILITY_TOL).unwrap();
        let mut y = DVector::zeros(m);
        y[culprit] = 1.0;
        return Ok(PhaseOne::Infeasible(InfeasibilityCertificate {
            multipliers: y,
            residual: rhs[culprit],
            phase1_min: rhs[culprit],
        }));
    }
    let violation = |x: &DVector<f64>| {
        live.iter().map(|&i| (rhs[i] - rows.row(i).dot(&x.transpose())) / scales[i]).fold(0.0, f64::max)
    };
    if violation(&x0) <= FEAS_TOL {
        return Ok(PhaseOne::Feasible(x0));
    }
    let mut x = x0.clone();
    let mut residual_t = violation(&x);
    // Two passes: the second restarts from the first result to clean up
    // accumulated round-off.
    for _ in 0..2 {
        let n = live.len() + 1;
        let mut a = DMatrix::zeros(n, d + 1);
        let mut b = DVector::zeros(n);
        for (r, &i) in live.iter().enumerate() {
            for c in 0..d {
                a[(r, c)] = rows[(i, c)] / scales[i];
            }
            a[(r, d)] = 1.0;
            b[r] = rhs[i] / scales[i];
        }
        a[(n - 1, d)] = 1.0;
        let mut z = DVector::zeros(d + 1);
        z.rows_mut(0, d).copy_from(&x);
        z[d] = residual_t.max(0.0);
        let mut c = DVector::zeros(d + 1);
        c[d] = 1.0;
        let h = DMatrix::zeros(d + 1, d + 1);
        let pscales = vec![1.0; n];
        let (zs, _, lam, _) = active_set(&h, &c, &a, &b, &pscales, z)?;
        x = zs.rows(0, d).into_owned();
        residual_t = violation(&x);
        if residual_t <= INFEASIBILITY_TOL {
            return Ok(PhaseOne::Feasible(x));
        }
        if zs[d] > INFEASIBILITY_TOL {
            let mut y = DVector::zeros(m);
            for (r, &i) in live.iter().enumerate() {
                y[i] = lam[r].max(0.0) / scales[i];
            }
            let residual = rhs.dot(&y);
            return Ok(PhaseOne::Infeasible(InfeasibilityCertificate { multipliers: y, residual, phase1_min: zs[d] }));
        }
    }
    Ok(PhaseOne::Feasible(x))
}

/// Primal active-set iterations from a feasible `x`. Returns the optimum,
/// working set, row multipliers and iteration count.
fn active_set(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    scales: &[f64],
    mut x: DVector<f64>,
) -> Result<(DVector<f64>, Vec<usize>, DVector<f64>, usize), QpError> {
    let (m, d) = a.shape();
    let slack = |x: &DVector<f64>, i: usize| (a.row(i).dot(&x.transpose()) - b[i]) / scales[i].max(1e-300);
    let mut work: Vec<usize> = Vec::new();
    for i in 0..m {
        if scales[i] > 1e-14 && slack(&x, i).abs() <= 1e-10 && work.len() < d {
            let mut trial = work.clone();
            trial.push(i);
            if rank(&gather_rows(a, &trial)) == trial.len() {
                work = trial;
            }
        }
    }
    let mut last_residual = f64::INFINITY;
    for iter in 0..MAX_ITERATIONS {
        let g = h * &x + c;
        let aw = gather_rows(a, &work);
        let z = null_space(&aw, d);
        let step = if z.ncols() == 0 { Step::Newton(DVector::zeros(d)) } else { reduced_step(h, &g, &z) };
        let (p, unbounded_ok) = match step {
            Step::Newton(p) => (p, false),
            Step::Ray(p) => (p, true),
        };
        let xnorm = 1.0 + x.amax();
        if p.amax() <= 1e-13 * xnorm {
            let lam = multipliers(&aw, &g);
            last_residual = (&g - aw.transpose() * &lam).amax();
            let worst = lam
                .iter()
                .enumerate()
                .filter(|(_, &l)| l < -MULT_TOL)
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k);
            let Some(worst) = worst else {
                let mut full = DVector::zeros(m);
                for (k, &i) in work.iter().enumerate() {
                    full[i] = lam[k].max(0.0);
                }
                return Ok((x, work, full, iter));
            };
            work.remove(worst);
            continue;
        }
        let mut alpha = if unbounded_ok { f64::INFINITY } else { 1.0 };
        let mut blocking = None;
        for i in 0..m {
            if work.contains(&i) || scales[i] <= 1e-14 {
                continue;
            }
            let ap = a.row(i).dot(&p.transpose());
            if ap < -1e-14 * scales[i] * p.amax() {
                let ratio = ((b[i] - a.row(i).dot(&x.transpose())) / ap).max(0.0);
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
        }
        if !alpha.is_finite() {
            return Err(QpError::Unbounded);
        }
        x += &p * alpha;
        if let Some(i) = blocking {
            work.push(i);
        }
    }
    Err(QpError::IterationLimit { cap: MAX_ITERATIONS, residual: last_residual })
}

enum Step {
    Newton(DVector<f64>),
    /// Zero-curvature descent direction; the step length is set by the ratio test alone.
    Ray(DVector<f64>),
}

fn reduced_step(h: &DMatrix<f64>, g: &DVector<f64>, z: &DMatrix<f64>) -> Step {
    let rh = z.transpose() * h * z;
    let rg = z.transpose() * g;
    let eig = SymmetricEigen::new(rh);
    let scale = 1.0 + eig.eigenvalues.amax();
    let coeff = eig.eigenvectors.transpose() * &rg;
    let gnorm = 1.0 + g.amax();
    let mut ray = DVector::zeros(coeff.len());
    let mut newton = DVector::zeros(coeff.len());
    let mut has_ray = false;
    for k in 0..coeff.len() {
        let lam = eig.eigenvalues[k];
        if lam > CURV_TOL * scale {
            newton[k] = -coeff[k] / lam;
        } else if coeff[k].abs() > 1e-12 * gnorm {
            ray[k] = -coeff[k];
            has_ray = true;
        }
    }
    if has_ray {
        Step::Ray(z * (&eig.eigenvectors * ray))
    } else {
        Step::Newton(z * (&eig.eigenvectors * newton))
    }
}

fn gather_rows(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), a.ncols(), |r, c| a[(idx[r], c)])
}

fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let tol = 1e-10 * sv.amax().max(1e-300);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Orthonormal basis of `{p : A p = 0}`.
fn null_space(aw: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    if aw.nrows() == 0 {
        return DMatrix::identity(d, d);
    }
    let gram = aw.transpose() * aw;
    let eig = SymmetricEigen::new(gram);
    let tol = 1e-10 * (1.0 + eig.eigenvalues.amax());
    let cols: Vec<usize> = (0..d).filter(|&k| eig.eigenvalues[k] <= tol).collect();
    DMatrix::from_fn(d, cols.len(), |r, c| eig.eigenvectors[(r, cols[c])])
}

/// Least-squares solution of `A' lam = g`.
fn multipliers(aw: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    if aw.nrows() == 0 {
        return DVector::zeros(0);
    }
    let at = aw.transpose();
    at.svd(true, true).solve(g, 1e-13).unwrap_or_else(|_| DVector::zeros(aw.nrows()))
}

/// Ball-bounded QP: bisection on the multiplier of `|x_B|^2 <= r^2`.
fn solve_with_ball(problem: &QpProblem, ball: &BallConstraint, warm: &[usize]) -> Result<SolveResult, QpError> {
    let mut plain = problem.clone();
    plain.ball = None;
    let base = solve_polyhedral(&plain, warm)?;
    if base.status == QpStatus::Infeasible {
        return Ok(base);
    }
    let r = ball.radius;
    let fits = |res: &SolveResult| ball_norm(&res.solution, &ball.indices) <= r * (1.0 + 1e-12) + 1e-13;
    if fits(&base) {
        return Ok(base);
    }
    // Minimum-norm point of the polyhedron on the ball coordinates decides feasibility.
    let d = problem.dim();
    let mut norm_hess = DMatrix::zeros(d, d);
    for &i in &ball.indices {
        norm_hess[(i, i)] = 2.0;
    }
    let closest = solve_polyhedral(&QpProblem::new(norm_hess.clone(), DVector::zeros(d), plain.rows.clone(), plain.rhs.clone()), &[])?;
    let min_norm = ball_norm(&closest.solution, &ball.indices);
    if min_norm > r + INFEASIBILITY_TOL {
        return Ok(SolveResult {
            status: QpStatus::Infeasible,
            solution: closest.solution,
            active_set: Vec::new(),
            multipliers: DVector::zeros(problem.rhs.len()),
            objective: f64::INFINITY,
            iterations: closest.iterations,
            certificate: Some(InfeasibilityCertificate {
                multipliers: closest.multipliers,
                residual: min_norm - r,
                phase1_min: min_norm - r,
            }),
        });
    }
    let with_mu = |mu: f64, warm: &[usize]| -> Result<SolveResult, QpError> {
        let mut p = plain.clone();
        p.hessian += &norm_hess * mu;
        solve_polyhedral(&p, warm)
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut hi_res = with_mu(hi, &base.active_set)?;
    let mut doublings = 0;
    while !fits(&hi_res) {
        lo = hi;
        hi *= 4.0;
        hi_res = with_mu(hi, &hi_res.active_set)?;
        doublings += 1;
        if doublings > 60 {
            // The polyhedron touches the ball only at its minimum-norm point.
            let mut res = closest;
            res.objective = problem.objective(&res.solution);
            return Ok(res);
        }
    }
    let mut iterations = base.iterations + hi_res.iterations;
    for _ in 0..100 {
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let res = with_mu(mid, &hi_res.active_set)?;
        iterations += res.iterations;
        if fits(&res) {
            hi = mid;
            hi_res = res;
        } else {
            lo = mid;
        }
    }
    hi_res.objective = problem.objective(&hi_res.solution);
    hi_res.iterations = iterations;
    Ok(hi_res)
}
