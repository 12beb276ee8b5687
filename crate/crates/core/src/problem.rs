//! Well layout and the shared description of a flow problem.

use crate::error::{Error, Result};
use crate::fvm::{Boundary, Grid, PermeabilityField, SourceField};

/// Injection rate of the reference setup, m³/s (about 1 Mt/year).
pub const DEFAULT_INJECTION_RATE: f64 = 0.031688;

/// Injector, extractor and monitored cell, plus the fixed injection rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellSet {
    pub injector: usize,
    pub extractor: usize,
    pub critical: usize,
    /// m³/s, injected at `injector`.
    pub injection_rate: f64,
}

impl WellSet {
    /// Reference layout on a 24×24 grid: injector (6,12), extractor (15,12),
    /// critical cell (18,12). Other resolutions scale the same positions.
    pub fn default_for(grid: &Grid) -> Self {
        let scale = |c: usize, n: usize| ((c as f64 + 0.5) * n as f64 / 24.0).floor() as usize;
        let j = scale(12, grid.ny);
        Self {
            injector: grid.index(scale(6, grid.nx), j),
            extractor: grid.index(scale(15, grid.nx), j),
            critical: grid.index(scale(18, grid.nx), j),
            injection_rate: DEFAULT_INJECTION_RATE,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let n = grid.n_cells();
        for (name, c) in [("injector", self.injector), ("extractor", self.extractor), ("critical", self.critical)] {
            if c >= n {
                return Err(Error::InvalidInput(format!("{name} cell {c} outside grid of {n} cells")));
            }
        }
        if self.injector == self.extractor || self.injector == self.critical || self.extractor == self.critical {
            return Err(Error::InvalidInput("well cells must be distinct".into()));
        }
        if !self.injection_rate.is_finite() {
            return Err(Error::NonFinite("injection rate".into()));
        }
        Ok(())
    }

    /// Cell sources for a given extraction rate (positive extracts).
    pub fn sources(&self, n_cells: usize, extraction_rate: f64) -> SourceField {
        let mut q = SourceField::zeros(n_cells);
        q.values[self.injector] += self.injection_rate;
        q.values[self.extractor] -= extraction_rate;
        q
    }
}

/// Geometry, rock and wells of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub grid: Grid,
    pub perm: PermeabilityField,
    pub wells: WellSet,
    pub boundary: Boundary,
}

impl Problem {
    pub fn new(grid: Grid, perm: PermeabilityField, wells: WellSet, boundary: Boundary) -> Result<Self> {
        grid.check_len(perm.len())?;
        wells.validate(&grid)?;
        Ok(Self { grid, perm, wells, boundary })
    }

    pub fn with_perm(&self, perm: PermeabilityField) -> Result<Self> {
        self.grid.check_len(perm.len())?;
        Ok(Self { perm, ..self.clone() })
    }

    pub(crate) fn check_rate(rate: f64) -> Result<()> {
        if !rate.is_finite() {
            return Err(Error::NonFinite(format!("extraction rate {rate}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fvm::build_grid;

    #[test]
    fn reference_layout() {
        let g = build_grid(24, 24, 1000.0, 1000.0).unwrap();
        let w = WellSet::default_for(&g);
        assert_eq!(g.coords(w.injector), (6, 12));
        assert_eq!(g.coords(w.extractor), (15, 12));
        assert_eq!(g.coords(w.critical), (18, 12));
        w.validate(&g).unwrap();
    }

    #[test]
    fn scaled_layout_is_valid() {
        for n in [8, 12, 16, 48] {
            let g = build_grid(n, n, 1000.0, 1000.0).unwrap();
            WellSet::default_for(&g).validate(&g).unwrap();
        }
    }

    #[test]
    fn duplicate_cells_rejected() {
        let g = build_grid(5, 5, 5.0, 5.0).unwrap();
        let w = WellSet { injector: 3, extractor: 3, critical: 7, injection_rate: 1.0 };
        assert!(w.validate(&g).is_err());
        let w = WellSet { injector: 3, extractor: 4, critical: 25, injection_rate: 1.0 };
        assert!(w.validate(&g).is_err());
    }
}
