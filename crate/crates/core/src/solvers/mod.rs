//! Numerical back ends: a dense convex QP solver and a multi-start local
//! minimizer for the small nonconvex margin programs.

pub mod multistart;
pub mod qp;

pub use multistart::{multistart_minimize, DomainBlock, MultistartError, MultistartOptions, MultistartResult, ProductDomain};
pub use qp::{solve_qp, solve_qp_warm, QpError, QpProblem, QpStatus, SolveResult};

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in the base of the `dim`-th prime.
pub fn halton(index: usize, dim: usize) -> f64 {
    let base = PRIMES[dim % PRIMES.len()];
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}
