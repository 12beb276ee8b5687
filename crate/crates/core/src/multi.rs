//! Incompressible, immiscible two-phase flow with the IMPES scheme.
//!
//! Each step solves the pressure equation with the total mobility of the
//! current saturation, derives face fluxes, picks a CFL-limited time step and
//! advances the wetting saturation explicitly with donor-cell upwinding. Only
//! the wetting phase is injected; sinks withdraw at the local fractional flow.
//!
//! The reverse pass differentiates the terminal critical-cell pressure with
//! respect to the extraction rate. Time steps and upwind directions are held
//! at their forward values.

use crate::error::{Error, Result};
use crate::fvm::{face_fluxes, FluxField, Grid, LinearSystem, Neighbor, PressureField, SourceField};
use crate::linalg::{solve_linear_with, SolverOptions};
use crate::problem::Problem;

/// Saturations may leave [0, 1] by at most this much before a step is rejected.
pub const SATURATION_TOLERANCE: f64 = 1e-12;

/// One year in seconds.
pub const YEAR_SECONDS: f64 = 3.15576e7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidProps {
    /// Pa·s
    pub mu_w: f64,
    /// Pa·s
    pub mu_nw: f64,
    pub s_wc: f64,
    pub s_nwr: f64,
    pub porosity: f64,
    /// kg/m³; sources are volumetric so this only enters through q_w/ρ_w.
    pub rho_w: f64,
}

impl Default for FluidProps {
    fn default() -> Self {
        Self { mu_w: 1.0, mu_nw: 1.0, s_wc: 0.0, s_nwr: 0.0, porosity: 1.0, rho_w: 1.0 }
    }
}

impl FluidProps {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("fluid properties: {m}")));
        if !(self.mu_w > 0.0 && self.mu_nw > 0.0 && self.mu_w.is_finite() && self.mu_nw.is_finite()) {
            return bad("viscosities must be positive");
        }
        if !(self.s_wc >= 0.0 && self.s_nwr >= 0.0 && self.s_wc + self.s_nwr < 1.0) {
            return bad("need s_wc, s_nwr >= 0 and s_wc + s_nwr < 1");
        }
        if !(self.porosity > 0.0 && self.porosity <= 1.0) {
            return bad("porosity must lie in (0, 1]");
        }
        if !(self.rho_w > 0.0 && self.rho_w.is_finite()) {
            return bad("wetting density must be positive");
        }
        Ok(())
    }

    fn mobile_range(&self) -> f64 {
        1.0 - self.s_nwr - self.s_wc
    }

    /// Normalized saturation clamped to [0, 1] and its derivative in `s`
    /// (zero where clamped).
    #[inline]
    fn normalized(&self, s: f64) -> (f64, f64) {
        let den = self.mobile_range();
        let raw = (s - self.s_wc) / den;
        if raw < 0.0 {
            (0.0, 0.0)
        } else if raw > 1.0 {
            (1.0, 0.0)
        } else {
            (raw, 1.0 / den)
        }
    }

    /// (λ_w, λ_nw, dλ_w/ds, dλ_nw/ds)
    #[inline]
    fn mobilities(&self, s: f64) -> (f64, f64, f64, f64) {
        let (ss, d) = self.normalized(s);
        let lw = ss * ss / self.mu_w;
        let lnw = (1.0 - ss) * (1.0 - ss) / self.mu_nw;
        (lw, lnw, 2.0 * ss / self.mu_w * d, -2.0 * (1.0 - ss) / self.mu_nw * d)
    }

    #[inline]
    pub(crate) fn total_mobility(&self, s: f64) -> (f64, f64) {
        let (lw, lnw, dw, dnw) = self.mobilities(s);
        (lw + lnw, dw + dnw)
    }

    /// f(s) and f'(s).
    #[inline]
    pub(crate) fn frac_flow(&self, s: f64) -> (f64, f64) {
        let (lw, lnw, dw, dnw) = self.mobilities(s);
        let lt = lw + lnw;
        (lw / lt, (dw * lnw - lw * dnw) / (lt * lt))
    }

    /// max over s* of |df/ds*|. Exactly 2 for equal viscosities, otherwise
    /// sampled on a 1e-3 grid.
    pub fn max_frac_flow_slope(&self) -> f64 {
        if self.mu_w == self.mu_nw {
            return 2.0;
        }
        let m = self.mu_w / self.mu_nw;
        (0..=1000)
            .map(|i| {
                let x = i as f64 * 1e-3;
                let d = x * x + m * (1.0 - x) * (1.0 - x);
                // d/dx [x² / d]
                ((2.0 * x * d - x * x * (2.0 * x - 2.0 * m * (1.0 - x))) / (d * d)).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn check_saturation(s: f64) -> Result<()> {
    if !(s >= -SATURATION_TOLERANCE && s <= 1.0 + SATURATION_TOLERANCE) {
        return Err(Error::InvalidInput(format!("saturation {s} outside [0, 1]")));
    }
    Ok(())
}

pub fn mobility_w(s: f64, props: &FluidProps) -> Result<f64> {
    check_saturation(s)?;
    Ok(props.mobilities(s).0)
}

pub fn mobility_nw(s: f64, props: &FluidProps) -> Result<f64> {
    check_saturation(s)?;
    Ok(props.mobilities(s).1)
}

pub fn fractional_flow(s: f64, props: &FluidProps) -> Result<f64> {
    check_saturation(s)?;
    Ok(props.frac_flow(s).0)
}

/// Wetting-phase saturation per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationField {
    pub values: Vec<f64>,
}

impl SaturationField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for v in &values {
            check_saturation(*v)?;
        }
        Ok(Self { values })
    }

    pub fn uniform(n: usize, s: f64) -> Result<Self> {
        Self::new(vec![s; n])
    }
}

/// Realized time steps of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStepSchedule {
    pub steps: Vec<f64>,
    pub cfl_factor: f64,
}

impl TimeStepSchedule {
    pub fn total(&self) -> f64 {
        self.steps.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpesSettings {
    pub props: FluidProps,
    /// Fraction of the CFL limit, in (0, 1].
    pub cfl_factor: f64,
    pub max_steps: usize,
    /// Saturation of fluid entering through Dirichlet boundaries.
    pub boundary_saturation: f64,
    pub solver: SolverOptions,
}

impl Default for ImpesSettings {
    fn default() -> Self {
        Self {
            props: FluidProps::default(),
            cfl_factor: 0.9,
            max_steps: 100_000,
            boundary_saturation: 0.0,
            solver: SolverOptions::default(),
        }
    }
}

impl ImpesSettings {
    pub fn validate(&self) -> Result<()> {
        self.props.validate()?;
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= 1.0) {
            return Err(Error::InvalidInput(format!("cfl factor {} outside (0, 1]", self.cfl_factor)));
        }
        check_saturation(self.boundary_saturation)
    }
}

fn total_mobility_field(s: &[f64], props: &FluidProps) -> Vec<f64> {
    s.iter().map(|&v| props.total_mobility(v).0).collect()
}

/// Transmissibilities for the cell products `k λ_t(s)`; no-flow boundary
/// faces are zero.
fn impes_transmissibilities(problem: &Problem, s: &[f64], props: &FluidProps) -> Result<Vec<f64>> {
    let lam = total_mobility_field(s, props);
    if let Some((i, _)) = lam.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
        return Err(Error::InvalidInput(format!("zero total mobility in cell {i}")));
    }
    crate::fvm::transmissibilities(&problem.grid, &problem.perm, &lam, &problem.boundary)
}

struct PressureStep {
    pressure: PressureField,
    fluxes: FluxField,
}

fn pressure_step(
    problem: &Problem,
    s: &[f64],
    sources: &SourceField,
    props: &FluidProps,
    guess: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<PressureStep> {
    let trans = impes_transmissibilities(problem, s, props)?;
    let system = LinearSystem::from_transmissibilities(&problem.grid, &trans, sources, &problem.boundary)?;
    let pressure = solve_linear_with(&system, guess, opts)?;
    let fluxes = face_fluxes(&problem.grid, &trans, &pressure, &problem.boundary);
    Ok(PressureStep { pressure, fluxes })
}

/// Pressure solve with total mobility `λ_w(s) + λ_nw(s)` followed by the
/// Darcy face fluxes.
pub fn impes_pressure_step(
    problem: &Problem,
    props: &FluidProps,
    saturation: &SaturationField,
    extraction_rate: f64,
) -> Result<(PressureField, FluxField)> {
    Problem::check_rate(extraction_rate)?;
    problem.grid.check_len(saturation.values.len())?;
    let q = problem.wells.sources(problem.grid.n_cells(), extraction_rate);
    let st = pressure_step(problem, &saturation.values, &q, props, None, &SolverOptions::default())?;
    Ok((st.pressure, st.fluxes))
}

/// Largest stable step times `cfl_factor`; `remaining` when no cell
/// receives fluid.
pub fn cfl_timestep(
    grid: &Grid,
    fluxes: &FluxField,
    sources: &SourceField,
    props: &FluidProps,
    cfl_factor: f64,
    remaining: f64,
) -> f64 {
    let mut influx: Vec<f64> = sources.values.iter().map(|q| q.max(0.0)).collect();
    for (f, v) in grid.faces().iter().zip(&fluxes.values) {
        match f.neighbor {
            Neighbor::Cell(b) => {
                if *v > 0.0 {
                    influx[b] += v;
                } else {
                    influx[f.a] -= v;
                }
            }
            Neighbor::Boundary(_) => influx[f.a] += (-v).max(0.0),
        }
    }
    let max_in = influx.iter().cloned().fold(0.0, f64::max);
    if !(max_in > 0.0) {
        return remaining;
    }
    let capacity = props.porosity * grid.cell_volume * props.mobile_range();
    cfl_factor * capacity / (max_in * props.max_frac_flow_slope())
}

/// Explicit upwind saturation update.
pub fn saturation_step(
    saturation: &SaturationField,
    fluxes: &FluxField,
    sources: &SourceField,
    dt: f64,
    grid: &Grid,
    props: &FluidProps,
) -> Result<SaturationField> {
    saturation_step_ext(saturation, fluxes, sources, dt, grid, props, 0.0)
}

fn saturation_step_ext(
    saturation: &SaturationField,
    fluxes: &FluxField,
    sources: &SourceField,
    dt: f64,
    grid: &Grid,
    props: &FluidProps,
    boundary_saturation: f64,
) -> Result<SaturationField> {
    let s = &saturation.values;
    grid.check_len(s.len())?;
    grid.check_len(sources.values.len())?;
    let f_ext = props.frac_flow(boundary_saturation).0;
    let frac: Vec<f64> = s.iter().map(|&v| props.frac_flow(v).0).collect();
    let mut acc: Vec<f64> = sources
        .values
        .iter()
        .zip(&frac)
        .map(|(&q, &f)| q.max(0.0) + f * q.min(0.0))
        .collect();
    for (face, &v) in grid.faces().iter().zip(&fluxes.values) {
        match face.neighbor {
            Neighbor::Cell(b) => {
                let w = if v >= 0.0 { frac[face.a] } else { frac[b] } * v;
                acc[face.a] -= w;
                acc[b] += w;
            }
            Neighbor::Boundary(_) => {
                acc[face.a] -= if v > 0.0 { frac[face.a] } else { f_ext } * v;
            }
        }
    }
    let c = dt / (props.porosity * grid.cell_volume);
    let mut out = Vec::with_capacity(s.len());
    for (i, (si, a)) in s.iter().zip(&acc).enumerate() {
        let v = si + c * a;
        if !(v >= -SATURATION_TOLERANCE && v <= 1.0 + SATURATION_TOLERANCE) {
            return Err(Error::CflViolation { cell: i, value: v });
        }
        out.push(v);
    }
    Ok(SaturationField { values: out })
}

/// State at the start of one IMPES step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub saturation: Vec<f64>,
    pub pressure: Vec<f64>,
    pub fluxes: Vec<f64>,
    pub dt: f64,
}

/// Everything the reverse pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub steps: Vec<StepRecord>,
    pub final_saturation: Vec<f64>,
    pub final_pressure: Vec<f64>,
}

impl SimulationTrace {
    pub fn schedule(&self, cfl_factor: f64) -> TimeStepSchedule {
        TimeStepSchedule { steps: self.steps.iter().map(|r| r.dt).collect(), cfl_factor }
    }

    pub fn final_saturation(&self) -> SaturationField {
        SaturationField { values: self.final_saturation.clone() }
    }
}

/// How the forward run chooses its steps.
#[derive(Debug, Clone, Copy)]
pub enum StepControl<'a> {
    /// CFL steps, the last one truncated to land on the horizon (s).
    Horizon(f64),
    /// Exactly this many CFL steps.
    CflSteps(usize),
    /// Replay a fixed list of steps.
    Schedule(&'a [f64]),
}

/// Runs IMPES to the horizon and returns the terminal critical-cell pressure.
pub fn simulate_multiphase(
    problem: &Problem,
    settings: &ImpesSettings,
    extraction_rate: f64,
    horizon: f64,
    initial_saturation: &SaturationField,
) -> Result<(f64, SimulationTrace)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
    }
    simulate_controlled(problem, settings, extraction_rate, StepControl::Horizon(horizon), initial_saturation)
}

pub fn simulate_controlled(
    problem: &Problem,
    settings: &ImpesSettings,
    extraction_rate: f64,
    control: StepControl<'_>,
    initial_saturation: &SaturationField,
) -> Result<(f64, SimulationTrace)> {
    settings.validate()?;
    Problem::check_rate(extraction_rate)?;
    let grid = &problem.grid;
    grid.check_len(initial_saturation.values.len())?;
    for v in &initial_saturation.values {
        check_saturation(*v)?;
    }
    let props = &settings.props;
    let q = problem.wells.sources(grid.n_cells(), extraction_rate);

    let mut s = initial_saturation.clone();
    let mut steps = Vec::new();
    let mut guess: Option<Vec<f64>> = None;
    let mut remaining = match control {
        StepControl::Horizon(t) => t,
        _ => f64::INFINITY,
    };
    let horizon = remaining;
    loop {
        let k = steps.len();
        let done = match control {
            StepControl::Horizon(_) => remaining <= horizon * 1e-14,
            StepControl::CflSteps(n) => k >= n,
            StepControl::Schedule(sched) => k >= sched.len(),
        };
        if done {
            break;
        }
        if k >= settings.max_steps {
            return Err(Error::StepCapExceeded(settings.max_steps));
        }
        let st = pressure_step(problem, &s.values, &q, props, guess.as_deref(), &settings.solver)?;
        let dt = match control {
            StepControl::Horizon(_) => {
                cfl_timestep(grid, &st.fluxes, &q, props, settings.cfl_factor, remaining).min(remaining)
            }
            StepControl::CflSteps(_) => {
                let dt = cfl_timestep(grid, &st.fluxes, &q, props, settings.cfl_factor, f64::INFINITY);
                if !dt.is_finite() {
                    return Err(Error::InvalidInput("no flow: CFL step is unbounded".into()));
                }
                dt
            }
            StepControl::Schedule(sched) => sched[k],
        };
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("non-positive time step {dt}")));
        }
        let next = saturation_step_ext(&s, &st.fluxes, &q, dt, grid, props, settings.boundary_saturation)?;
        remaining -= dt;
        if let StepControl::Horizon(_) = control {
            if remaining < 0.0 {
                remaining = 0.0;
            }
        }
        guess = Some(st.pressure.values.clone());
        steps.push(StepRecord {
            saturation: std::mem::replace(&mut s, next).values,
            pressure: st.pressure.values,
            fluxes: st.fluxes.values,
            dt,
        });
    }
    let last = pressure_step(problem, &s.values, &q, props, guess.as_deref(), &settings.solver)?;
    let p_crit = last.pressure.at(problem.wells.critical);
    Ok((p_crit, SimulationTrace { steps, final_saturation: s.values, final_pressure: last.pressure.values }))
}

/// Accumulates `s̄ += Σ_f T̄_f ∂T_f/∂s` for transmissibilities built from
/// `k λ_t(s)` with harmonic averaging.
fn transmissibility_adjoint(problem: &Problem, s: &[f64], props: &FluidProps, t_bar: &[f64], s_bar: &mut [f64]) {
    let k = problem.perm.values();
    let (m, dm): (Vec<f64>, Vec<f64>) = s
        .iter()
        .zip(k)
        .map(|(&si, &ki)| {
            let (l, dl) = props.total_mobility(si);
            (ki * l, ki * dl)
        })
        .unzip();
    for (f, &tb) in problem.grid.faces().iter().zip(t_bar) {
        if tb == 0.0 {
            continue;
        }
        match f.neighbor {
            Neighbor::Cell(b) => {
                let (ma, mb) = (m[f.a], m[b]);
                let den = (ma + mb) * (ma + mb);
                s_bar[f.a] += tb * f.geom * 2.0 * mb * mb / den * dm[f.a];
                s_bar[b] += tb * f.geom * 2.0 * ma * ma / den * dm[b];
            }
            Neighbor::Boundary(side) => {
                if problem.boundary.pressure(side).is_some() {
                    s_bar[f.a] += tb * f.geom * dm[f.a];
                }
            }
        }
    }
}

/// Adds `−μᵀ ∂R/∂T` to `t_bar`, where `R = A(T) p − b(T)` is the pressure
/// residual.
fn residual_transmissibility_adjoint(problem: &Problem, mu: &[f64], p: &[f64], t_bar: &mut [f64]) {
    for (f, tb) in problem.grid.faces().iter().zip(t_bar.iter_mut()) {
        match f.neighbor {
            Neighbor::Cell(b) => *tb -= (mu[f.a] - mu[b]) * (p[f.a] - p[b]),
            Neighbor::Boundary(side) => {
                if let Some(pb) = problem.boundary.pressure(side) {
                    *tb -= mu[f.a] * (p[f.a] - pb);
                }
            }
        }
    }
}

/// d p_critical(T) / d q by reverse accumulation through a recorded run.
pub fn gradient_multiphase(
    problem: &Problem,
    settings: &ImpesSettings,
    extraction_rate: f64,
    horizon: f64,
    trace: &SimulationTrace,
) -> Result<f64> {
    let total: f64 = trace.steps.iter().map(|r| r.dt).sum();
    if (total - horizon).abs() > 1e-9 * horizon.abs() {
        return Err(Error::IncompleteTrace(format!("steps cover {total} s of a {horizon} s horizon")));
    }
    gradient_from_trace(problem, settings, extraction_rate, trace)
}

/// Reverse pass over whatever steps the trace holds.
pub fn gradient_from_trace(
    problem: &Problem,
    settings: &ImpesSettings,
    extraction_rate: f64,
    trace: &SimulationTrace,
) -> Result<f64> {
    let grid = &problem.grid;
    let n = grid.n_cells();
    let nf = grid.n_faces();
    if trace.final_saturation.len() != n || trace.final_pressure.len() != n {
        return Err(Error::IncompleteTrace("terminal state missing or mis-sized".into()));
    }
    for (i, r) in trace.steps.iter().enumerate() {
        if r.saturation.len() != n || r.pressure.len() != n || r.fluxes.len() != nf || !(r.dt > 0.0) {
            return Err(Error::IncompleteTrace(format!("step {i} is malformed")));
        }
    }
    Problem::check_rate(extraction_rate)?;
    let props = &settings.props;
    let wells = &problem.wells;
    let q = wells.sources(n, extraction_rate);
    let ext = wells.extractor;

    let adjoint_solve = |s: &[f64], rhs: Vec<f64>, guess: Option<&[f64]>| -> Result<Vec<f64>> {
        let trans = impes_transmissibilities(problem, s, props)?;
        let mut sys = LinearSystem::from_transmissibilities(grid, &trans, &SourceField::zeros(n), &problem.boundary)?;
        sys.rhs = rhs;
        Ok(solve_linear_with(&sys, guess, &settings.solver)?.values)
    };

    // terminal pressure solve
    let mut e = vec![0.0; n];
    e[wells.critical] = 1.0;
    let mu = adjoint_solve(&trace.final_saturation, e, None)?;
    let mut q_bar = -mu[ext];
    let mut t_bar = vec![0.0; nf];
    residual_transmissibility_adjoint(problem, &mu, &trace.final_pressure, &mut t_bar);
    let mut s_bar = vec![0.0; n];
    transmissibility_adjoint(problem, &trace.final_saturation, props, &t_bar, &mut s_bar);

    let f_ext = props.frac_flow(settings.boundary_saturation).0;
    let c = |dt: f64| dt / (props.porosity * grid.cell_volume);
    let mut mu_prev: Option<Vec<f64>> = None;

    for rec in trace.steps.iter().rev() {
        let s = &rec.saturation;
        let p = &rec.pressure;
        let v = &rec.fluxes;
        let ci = c(rec.dt);
        let acc_bar: Vec<f64> = s_bar.iter().map(|sb| sb * ci).collect();
        let (frac, dfrac): (Vec<f64>, Vec<f64>) = s.iter().map(|&x| props.frac_flow(x)).unzip();
        // identity part of s^{n+1} = s^n + c acc
        let mut s_bar_new = s_bar.clone();

        // sources: max(q,0) + f(s) min(q,0)
        for i in 0..n {
            if q.values[i] < 0.0 {
                s_bar_new[i] += acc_bar[i] * dfrac[i] * q.values[i];
            }
        }
        let q_ext_bar = if q.values[ext] > 0.0 { acc_bar[ext] } else { acc_bar[ext] * frac[ext] };
        q_bar -= q_ext_bar;

        // upwind face transport
        let mut v_bar = vec![0.0; nf];
        for (fi, face) in grid.faces().iter().enumerate() {
            let vf = v[fi];
            match face.neighbor {
                Neighbor::Cell(b) => {
                    let w_bar = acc_bar[b] - acc_bar[face.a];
                    let up = if vf >= 0.0 { face.a } else { b };
                    v_bar[fi] = w_bar * frac[up];
                    s_bar_new[up] += w_bar * dfrac[up] * vf;
                }
                Neighbor::Boundary(_) => {
                    let w_bar = -acc_bar[face.a];
                    if vf > 0.0 {
                        v_bar[fi] = w_bar * frac[face.a];
                        s_bar_new[face.a] += w_bar * dfrac[face.a] * vf;
                    } else {
                        v_bar[fi] = w_bar * f_ext;
                    }
                }
            }
        }

        // fluxes v = T Δp
        let trans = impes_transmissibilities(problem, s, props)?;
        let mut t_bar = vec![0.0; nf];
        let mut p_bar = vec![0.0; n];
        for (fi, face) in grid.faces().iter().enumerate() {
            let vb = v_bar[fi];
            if vb == 0.0 {
                continue;
            }
            match face.neighbor {
                Neighbor::Cell(b) => {
                    t_bar[fi] += vb * (p[face.a] - p[b]);
                    p_bar[face.a] += vb * trans[fi];
                    p_bar[b] -= vb * trans[fi];
                }
                Neighbor::Boundary(side) => {
                    if let Some(pb) = problem.boundary.pressure(side) {
                        t_bar[fi] += vb * (p[face.a] - pb);
                        p_bar[face.a] += vb * trans[fi];
                    }
                }
            }
        }

        // pressure solve A(s) p = b(q)
        if p_bar.iter().any(|x| *x != 0.0) {
            let mu = adjoint_solve(s, p_bar, mu_prev.as_deref())?;
            q_bar -= mu[ext];
            residual_transmissibility_adjoint(problem, &mu, p, &mut t_bar);
            mu_prev = Some(mu);
        }
        transmissibility_adjoint(problem, s, props, &t_bar, &mut s_bar_new);
        s_bar = s_bar_new;
    }
    Ok(q_bar)
}

/// Terminal critical pressure and its slope in the extraction rate.
pub fn critical_pressure_and_slope(
    problem: &Problem,
    settings: &ImpesSettings,
    extraction_rate: f64,
    horizon: f64,
    initial_saturation: &SaturationField,
) -> Result<(f64, f64)> {
    let (p, trace) = simulate_multiphase(problem, settings, extraction_rate, horizon, initial_saturation)?;
    let g = gradient_multiphase(problem, settings, extraction_rate, horizon, &trace)?;
    Ok((p, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fvm::{build_grid, Boundary, PermeabilityField};
    use crate::problem::WellSet;

    fn props() -> FluidProps {
        FluidProps::default()
    }

    #[test]
    fn endpoint_mobilities() {
        let p = props();
        assert_eq!(mobility_w(1.0, &p).unwrap(), 1.0);
        assert_eq!(mobility_nw(1.0, &p).unwrap(), 0.0);
        assert_eq!(mobility_w(0.0, &p).unwrap(), 0.0);
        assert_eq!(mobility_nw(0.0, &p).unwrap(), 1.0);
        assert_eq!(mobility_w(0.5, &p).unwrap(), 0.25);
        assert_eq!(mobility_nw(0.5, &p).unwrap(), 0.25);
        assert!(mobility_w(1.1, &p).is_err());
        assert!(mobility_nw(-0.1, &p).is_err());
    }

    #[test]
    fn fractional_flow_values() {
        let p = props();
        assert_eq!(fractional_flow(0.0, &p).unwrap(), 0.0);
        assert_eq!(fractional_flow(1.0, &p).unwrap(), 1.0);
        assert_eq!(fractional_flow(0.5, &p).unwrap(), 0.5);
        let p2 = FluidProps { mu_nw: 2.0, ..props() };
        assert!((fractional_flow(0.5, &p2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(fractional_flow(f64::NAN, &p).is_err());
    }

    #[test]
    fn connate_saturation_shifts_curves() {
        let p = FluidProps { s_wc: 0.2, s_nwr: 0.1, ..props() };
        assert_eq!(mobility_w(0.1, &p).unwrap(), 0.0);
        assert_eq!(mobility_nw(0.95, &p).unwrap(), 0.0);
        assert_eq!(fractional_flow(0.9, &p).unwrap(), 1.0);
    }

    #[test]
    fn fractional_flow_monotone() {
        for p in [props(), FluidProps { mu_w: 0.3, mu_nw: 5.0, ..props() }] {
            let mut last = 0.0;
            for i in 0..=1000 {
                let f = fractional_flow(i as f64 / 1000.0, &p).unwrap();
                assert!(f >= last);
                last = f;
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let p = FluidProps { mu_w: 0.7, mu_nw: 2.0, s_wc: 0.1, s_nwr: 0.05, ..props() };
        let h = 1e-6;
        for i in 1..20 {
            let s = 0.12 + 0.04 * i as f64;
            let (_, d) = p.frac_flow(s);
            let fd = (p.frac_flow(s + h).0 - p.frac_flow(s - h).0) / (2.0 * h);
            assert!((d - fd).abs() < 1e-7, "{s}: {d} vs {fd}");
            let (_, dl) = p.total_mobility(s);
            let fdl = (p.total_mobility(s + h).0 - p.total_mobility(s - h).0) / (2.0 * h);
            assert!((dl - fdl).abs() < 1e-7);
        }
    }

    #[test]
    fn max_slope() {
        assert_eq!(props().max_frac_flow_slope(), 2.0);
        let p = FluidProps { mu_w: 1.0, mu_nw: 1.0 + 1e-12, ..props() };
        assert!((p.max_frac_flow_slope() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_props_rejected() {
        assert!(FluidProps { mu_w: 0.0, ..props() }.validate().is_err());
        assert!(FluidProps { s_wc: 0.6, s_nwr: 0.4, ..props() }.validate().is_err());
        assert!(FluidProps { porosity: 1.5, ..props() }.validate().is_err());
        props().validate().unwrap();
    }

    fn small_problem(n: usize) -> Problem {
        let g = build_grid(n, n, 1000.0, 1000.0).unwrap();
        let k = PermeabilityField::uniform(n * n, 1e-8).unwrap();
        let w = WellSet::default_for(&g);
        Problem::new(g, k, w, Boundary::dirichlet(0.0)).unwrap()
    }

    #[test]
    fn cfl_limits() {
        let pr = small_problem(3);
        let g = &pr.grid;
        let zero = FluxField { values: vec![0.0; g.n_faces()] };
        assert_eq!(cfl_timestep(g, &zero, &SourceField::zeros(9), &props(), 0.9, 42.0), 42.0);
        let s0 = SaturationField::uniform(9, 0.0).unwrap();
        let (_, flux) = impes_pressure_step(&pr, &props(), &s0, 0.0).unwrap();
        let q = pr.wells.sources(9, 0.0);
        let dt1 = cfl_timestep(g, &flux, &q, &props(), 0.9, f64::INFINITY);
        let doubled = FluxField { values: flux.values.iter().map(|v| 2.0 * v).collect() };
        let q2 = SourceField { values: q.values.iter().map(|v| 2.0 * v).collect() };
        let dt2 = cfl_timestep(g, &doubled, &q2, &props(), 0.9, f64::INFINITY);
        assert!((dt1 / dt2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn idle_saturation_step() {
        let g = build_grid(4, 4, 4.0, 4.0).unwrap();
        let s = SaturationField::new((0..16).map(|i| i as f64 / 15.0).collect()).unwrap();
        let zero = FluxField { values: vec![0.0; g.n_faces()] };
        let next = saturation_step(&s, &zero, &SourceField::zeros(16), 10.0, &g, &props()).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn injector_cell_fills() {
        let pr = small_problem(8);
        let s0 = SaturationField::uniform(64, 0.0).unwrap();
        let (_, flux) = impes_pressure_step(&pr, &props(), &s0, 0.0).unwrap();
        let q = pr.wells.sources(64, 0.0);
        let dt = cfl_timestep(&pr.grid, &flux, &q, &props(), 0.9, f64::INFINITY);
        let s1 = saturation_step(&s0, &flux, &q, dt, &pr.grid, &props()).unwrap();
        assert!(s1.values[pr.wells.injector] > 0.0);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let pr = small_problem(8);
        let s0 = SaturationField::uniform(64, 0.0).unwrap();
        let (_, flux) = impes_pressure_step(&pr, &props(), &s0, 0.0).unwrap();
        let q = pr.wells.sources(64, 0.0);
        let dt = cfl_timestep(&pr.grid, &flux, &q, &props(), 1.0, f64::INFINITY);
        let r = saturation_step(&s0, &flux, &q, 100.0 * dt, &pr.grid, &props());
        assert!(matches!(r, Err(Error::CflViolation { .. })));
    }

    #[test]
    fn two_cell_transfer_conserves() {
        let g = build_grid(3, 3, 3.0, 3.0).unwrap();
        let mut v = vec![0.0; g.n_faces()];
        v[0] = 0.25; // cell 0 -> cell 1
        let s = SaturationField::new(vec![0.8, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let next = saturation_step(&s, &FluxField { values: v }, &SourceField::zeros(9), 1.0, &g, &props()).unwrap();
        let lost = s.values[0] - next.values[0];
        let gained = next.values[1] - s.values[1];
        assert!(lost > 0.0);
        assert!((lost - gained).abs() < 1e-15);
    }

    #[test]
    fn horizon_is_covered_exactly() {
        let pr = small_problem(8);
        let s0 = SaturationField::uniform(64, 0.0).unwrap();
        let horizon = 5.0e5;
        let (_, trace) = simulate_multiphase(&pr, &ImpesSettings::default(), 0.01, horizon, &s0).unwrap();
        let total: f64 = trace.steps.iter().map(|r| r.dt).sum();
        assert!((total - horizon).abs() <= 1e-9 * horizon);
        assert!(trace.steps.len() > 1);
    }

    #[test]
    fn quiet_reservoir_stays_at_boundary_pressure() {
        let mut pr = small_problem(6);
        pr.wells.injection_rate = 0.0;
        let s0 = SaturationField::uniform(36, 0.3).unwrap();
        let (p, trace) = simulate_multiphase(&pr, &ImpesSettings::default(), 0.0, 1e6, &s0).unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(trace.steps.len(), 1);
        assert!(trace.final_pressure.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_cap_enforced() {
        let pr = small_problem(8);
        let s0 = SaturationField::uniform(64, 0.0).unwrap();
        let settings = ImpesSettings { max_steps: 2, ..Default::default() };
        let r = simulate_multiphase(&pr, &settings, 0.0, YEAR_SECONDS, &s0);
        assert!(matches!(r, Err(Error::StepCapExceeded(2))));
    }

    #[test]
    fn truncated_trace_rejected() {
        let pr = small_problem(8);
        let s0 = SaturationField::uniform(64, 0.0).unwrap();
        let settings = ImpesSettings::default();
        let (_, mut trace) = simulate_multiphase(&pr, &settings, 0.01, 3e5, &s0).unwrap();
        trace.steps.pop();
        assert!(gradient_multiphase(&pr, &settings, 0.01, 3e5, &trace).is_err());
        trace.final_pressure.clear();
        assert!(gradient_from_trace(&pr, &settings, 0.01, &trace).is_err());
    }
}
