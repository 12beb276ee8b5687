//! One interface over both simulators, as the training loop sees them.

use crate::error::{Error, Result};
use crate::fvm::{Boundary, Grid, PermeabilityField};
use crate::multi::{self, ImpesSettings, SaturationField, StepControl};
use crate::problem::{Problem, WellSet};
use crate::single;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhysicsKind {
    Single,
    Multi,
}

impl PhysicsKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhysicsKind::Single => "single",
            PhysicsKind::Multi => "multi",
        }
    }
}

impl std::str::FromStr for PhysicsKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "multi" => Ok(Self::Multi),
            other => Err(Error::InvalidInput(format!("unknown physics `{other}` (single|multi)"))),
        }
    }
}

/// Everything about a simulation except the permeability field and the rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsModel {
    pub kind: PhysicsKind,
    pub grid: Grid,
    pub wells: WellSet,
    pub boundary: Boundary,
    pub impes: ImpesSettings,
    /// Multiphase horizon, s.
    pub horizon: f64,
    pub initial_saturation: f64,
}

impl PhysicsModel {
    pub fn problem(&self, perm: &PermeabilityField) -> Result<Problem> {
        Problem::new(self.grid.clone(), perm.clone(), self.wells, self.boundary)
    }

    pub fn with_kind(&self, kind: PhysicsKind) -> Self {
        Self { kind, ..self.clone() }
    }

    fn initial(&self) -> Result<SaturationField> {
        SaturationField::uniform(self.grid.n_cells(), self.initial_saturation)
    }

    /// Pressure at the critical cell: steady for single-phase, terminal for
    /// multiphase.
    pub fn critical_pressure(&self, perm: &PermeabilityField, rate: f64) -> Result<f64> {
        let problem = self.problem(perm)?;
        match self.kind {
            PhysicsKind::Single => single::critical_pressure(&problem, rate),
            PhysicsKind::Multi => {
                Ok(multi::simulate_multiphase(&problem, &self.impes, rate, self.horizon, &self.initial()?)?.0)
            }
        }
    }

    /// Critical pressure and its derivative in the extraction rate.
    pub fn critical_pressure_and_slope(&self, perm: &PermeabilityField, rate: f64) -> Result<(f64, f64)> {
        let problem = self.problem(perm)?;
        match self.kind {
            PhysicsKind::Single => single::critical_pressure_and_slope(&problem, rate),
            PhysicsKind::Multi => {
                multi::critical_pressure_and_slope(&problem, &self.impes, rate, self.horizon, &self.initial()?)
            }
        }
    }

    /// Central finite-difference slope with `h = max(1e-6 |q|, 1e-9)`. The
    /// multiphase version replays the time steps of the unperturbed run.
    pub fn fd_slope(&self, perm: &PermeabilityField, rate: f64) -> Result<f64> {
        let h = (1e-6 * rate.abs()).max(1e-9);
        let problem = self.problem(perm)?;
        match self.kind {
            PhysicsKind::Single => {
                let up = single::critical_pressure(&problem, rate + h)?;
                let down = single::critical_pressure(&problem, rate - h)?;
                Ok((up - down) / (2.0 * h))
            }
            PhysicsKind::Multi => {
                let s0 = self.initial()?;
                let (_, trace) = multi::simulate_multiphase(&problem, &self.impes, rate, self.horizon, &s0)?;
                let sched: Vec<f64> = trace.steps.iter().map(|r| r.dt).collect();
                let run = |q| multi::simulate_controlled(&problem, &self.impes, q, StepControl::Schedule(&sched), &s0);
                Ok((run(rate + h)?.0 - run(rate - h)?.0) / (2.0 * h))
            }
        }
    }
}
