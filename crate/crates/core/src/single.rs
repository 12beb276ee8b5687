//! Steady single-phase pressure solver and its adjoint.
//!
//! Mobility is one everywhere, so the pressure solves `A p = b(q)` where only
//! the extractor entry of `b` depends on the extraction rate `q`. The critical
//! pressure is therefore affine in `q` and its slope is `−μ[extractor]` with
//! `A μ = e_critical` (`A` is symmetric).

use crate::error::Result;
use crate::fvm::{assemble_pressure_system, LinearSystem, PressureField};
use crate::linalg::{solve_linear_with, SolverOptions};
use crate::problem::Problem;

fn system(problem: &Problem, extraction_rate: f64) -> Result<LinearSystem> {
    Problem::check_rate(extraction_rate)?;
    let n = problem.grid.n_cells();
    let q = problem.wells.sources(n, extraction_rate);
    assemble_pressure_system(&problem.grid, &problem.perm, &vec![1.0; n], &q, &problem.boundary)
}

pub fn solve_steady(problem: &Problem, extraction_rate: f64) -> Result<PressureField> {
    solve_steady_with(problem, extraction_rate, &SolverOptions::default())
}

pub fn solve_steady_with(problem: &Problem, extraction_rate: f64, opts: &SolverOptions) -> Result<PressureField> {
    solve_linear_with(&system(problem, extraction_rate)?, None, opts)
}

pub fn critical_pressure(problem: &Problem, extraction_rate: f64) -> Result<f64> {
    Ok(solve_steady(problem, extraction_rate)?.at(problem.wells.critical))
}

/// `seed_gradient · d p_critical / d q` via one adjoint solve.
pub fn gradient_steady(problem: &Problem, extraction_rate: f64, seed_gradient: f64) -> Result<f64> {
    let mut sys = system(problem, extraction_rate)?;
    sys.rhs.iter_mut().for_each(|b| *b = 0.0);
    sys.rhs[problem.wells.critical] = 1.0;
    let adj = solve_linear_with(&sys, None, &SolverOptions::default())?;
    Ok(-seed_gradient * adj.at(problem.wells.extractor))
}

/// Critical pressure and its slope with respect to the extraction rate.
pub fn critical_pressure_and_slope(problem: &Problem, extraction_rate: f64) -> Result<(f64, f64)> {
    let p = critical_pressure(problem, extraction_rate)?;
    let slope = gradient_steady(problem, extraction_rate, 1.0)?;
    Ok((p, slope))
}
