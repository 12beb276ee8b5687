//! Jacobi-preconditioned conjugate gradients for the symmetric pressure systems.

use crate::error::{Error, Result};
use crate::fvm::{LinearSystem, PressureField};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target ‖Ax − b‖/‖b‖.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10 · n`.
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: DEFAULT_TOLERANCE, max_iterations: None }
    }
}

pub fn solve_linear(system: &LinearSystem) -> Result<PressureField> {
    solve_linear_with(system, None, &SolverOptions::default())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// PCG with an optional initial guess.
///
/// Convergence is judged on the true residual: when the recurrence claims
/// convergence the residual is recomputed and the iteration restarts from it
/// if it is still above tolerance.
pub fn solve_linear_with(system: &LinearSystem, guess: Option<&[f64]>, opts: &SolverOptions) -> Result<PressureField> {
    let n = system.n();
    let b = &system.rhs;
    let nb = dot(b, b).sqrt();
    if nb == 0.0 {
        return Ok(PressureField { values: vec![0.0; n] });
    }
    if !nb.is_finite() {
        return Err(Error::NonFinite("right-hand side".into()));
    }
    let max_iter = opts.max_iterations.unwrap_or(10 * n).max(1);
    let inv_diag: Vec<f64> = system.diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();

    let mut x = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        _ => vec![0.0; n],
    };
    let mut ax = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];

    let true_residual = |x: &[f64], ax: &mut [f64], r: &mut [f64]| {
        system.matvec(x, ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        dot(r, r).sqrt() / nb
    };

    let mut rel = true_residual(&x, &mut ax, &mut r);
    if rel <= opts.tolerance {
        return Ok(PressureField { values: x });
    }
    let mut it = 0;
    'outer: while it < max_iter {
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while it < max_iter {
            it += 1;
            system.matvec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) || !pap.is_finite() {
                break 'outer;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            rel = dot(&r, &r).sqrt() / nb;
            if !rel.is_finite() {
                break 'outer;
            }
            if rel <= opts.tolerance {
                rel = true_residual(&x, &mut ax, &mut r);
                if rel <= opts.tolerance {
                    return Ok(PressureField { values: x });
                }
                continue 'outer;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
    Err(Error::NoConvergence { iterations: it, residual: rel })
}
