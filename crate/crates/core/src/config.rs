//! Run configuration: flat `key = value` text.
//!
//! ```text
//! # comment
//! geostat.variance = 0.25
//! training.epochs_finetune = 30   # trailing comments are fine
//! ```
//!
//! Keys are case-sensitive and listed in [`registry`]. Unknown keys,
//! repeated keys and malformed lines are errors; omitted keys keep their
//! defaults. Every violated invariant is reported, not only the first.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fvm::{build_grid, Boundary, Grid};
use crate::geostats::{CovarianceKind, GeostatConfig};
use crate::multi::{FluidProps, ImpesSettings};
use crate::physics::{PhysicsKind, PhysicsModel};
use crate::problem::WellSet;
use crate::surrogate::Architecture;
use crate::training::{Trainer, TrainingConfig};

/// Where a default comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Stated in the published study this tool reproduces.
    Published,
    /// Follows from other published values.
    Derived,
    /// Chosen here; not in the published study.
    Chosen,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Published => "published",
            Origin::Derived => "derived",
            Origin::Chosen => "chosen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

/// Well positions as `(i, j)` cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellSpec {
    pub injector: (usize, usize),
    pub extractor: (usize, usize),
    pub critical: (usize, usize),
    pub injection_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientSpec {
    pub cfl_factor: f64,
    pub max_steps: usize,
    pub horizon: f64,
    pub initial_saturation: f64,
    pub boundary_saturation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSpec {
    pub n_samples: usize,
    /// Pa
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub wells: WellSpec,
    pub boundary_pressure: f64,
    pub fluid: FluidProps,
    pub transient: TransientSpec,
    pub geostat: GeostatConfig,
    pub training: TrainingConfig,
    pub eval: EvalSpec,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec { nx: 24, ny: 24, lx: 1000.0, ly: 1000.0 },
            wells: WellSpec { injector: (6, 12), extractor: (15, 12), critical: (18, 12), injection_rate: 0.031688 },
            boundary_pressure: 0.0,
            fluid: FluidProps::default(),
            transient: TransientSpec {
                cfl_factor: 0.9,
                max_steps: 100_000,
                horizon: crate::multi::YEAR_SECONDS,
                initial_saturation: 0.0,
                boundary_saturation: 0.0,
            },
            geostat: GeostatConfig {
                covariance_kind: CovarianceKind::Exponential,
                correlation_length: 5000.0 / 24.0,
                variance: 0.25,
                mean_log_perm: -7.3,
                n_modes: 200,
                matern_smoothness: 1.5,
            },
            training: TrainingConfig::default(),
            eval: EvalSpec { n_samples: 10_000, threshold: crate::evaluate::DEFAULT_THRESHOLD },
            threads: 0,
        }
    }
}

trait Value: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn show(&self) -> String;
}

impl Value for f64 {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{s}` is not finite"))
        }
    }
    fn show(&self) -> String {
        format!("{self:?}")
    }
}

impl Value for usize {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("`{s}` is not a non-negative integer"))
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("`{s}` is not a non-negative integer"))
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for CovarianceKind {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn show(&self) -> String {
        self.as_str().to_string()
    }
}

/// One configuration key.
pub struct Key {
    pub name: &'static str,
    pub origin: Origin,
    pub doc: &'static str,
    set: fn(&mut RunConfig, &str) -> std::result::Result<(), String>,
    get: fn(&RunConfig) -> String,
}

impl Key {
    /// Current value in canonical text form.
    pub fn value(&self, c: &RunConfig) -> String {
        (self.get)(c)
    }
}

macro_rules! keys {
    ($( $name:literal, $origin:ident, $ty:ty, $doc:literal, |$c:ident| $field:expr; )*) => {
        vec![$(Key {
            name: $name,
            origin: Origin::$origin,
            doc: $doc,
            set: |$c: &mut RunConfig, v: &str| { $field = <$ty as Value>::parse(v)?; Ok(()) },
            get: |$c: &RunConfig| <$ty as Value>::show(&$field),
        }),*]
    };
}

/// All keys in canonical order.
pub fn registry() -> Vec<Key> {
    keys! {
        "grid.nx", Derived, usize, "cells along x; the bundled network needs 24", |c| c.grid.nx;
        "grid.ny", Derived, usize, "cells along y; the bundled network needs 24", |c| c.grid.ny;
        "grid.lx", Published, f64, "domain length along x, m", |c| c.grid.lx;
        "grid.ly", Published, f64, "domain length along y, m", |c| c.grid.ly;
        "wells.injector_i", Chosen, usize, "injector cell column", |c| c.wells.injector.0;
        "wells.injector_j", Chosen, usize, "injector cell row", |c| c.wells.injector.1;
        "wells.extractor_i", Chosen, usize, "extractor cell column", |c| c.wells.extractor.0;
        "wells.extractor_j", Chosen, usize, "extractor cell row", |c| c.wells.extractor.1;
        "wells.critical_i", Chosen, usize, "monitored cell column", |c| c.wells.critical.0;
        "wells.critical_j", Chosen, usize, "monitored cell row", |c| c.wells.critical.1;
        "wells.injection_rate", Published, f64, "injection rate, m^3/s", |c| c.wells.injection_rate;
        "boundary.pressure", Published, f64, "Dirichlet pressure on all four sides, Pa", |c| c.boundary_pressure;
        "fluid.mu_w", Published, f64, "wetting-phase viscosity, Pa s", |c| c.fluid.mu_w;
        "fluid.mu_nw", Published, f64, "non-wetting-phase viscosity, Pa s", |c| c.fluid.mu_nw;
        "fluid.s_wc", Published, f64, "connate wetting saturation", |c| c.fluid.s_wc;
        "fluid.s_nwr", Published, f64, "residual non-wetting saturation", |c| c.fluid.s_nwr;
        "fluid.porosity", Published, f64, "porosity", |c| c.fluid.porosity;
        "fluid.rho_w", Chosen, f64, "wetting density, kg/m^3 (volumetric sources make it inert)", |c| c.fluid.rho_w;
        "transient.cfl_factor", Chosen, f64, "fraction of the CFL step limit, in (0, 1]", |c| c.transient.cfl_factor;
        "transient.max_steps", Chosen, usize, "IMPES step cap", |c| c.transient.max_steps;
        "transient.horizon", Published, f64, "simulated time, s", |c| c.transient.horizon;
        "transient.initial_saturation", Chosen, f64, "uniform initial wetting saturation", |c| c.transient.initial_saturation;
        "transient.boundary_saturation", Chosen, f64, "saturation of fluid entering through the boundary", |c| c.transient.boundary_saturation;
        "geostat.covariance", Published, CovarianceKind, "exponential | matern", |c| c.geostat.covariance_kind;
        "geostat.correlation_length", Chosen, f64, "correlation length, m", |c| c.geostat.correlation_length;
        "geostat.variance", Chosen, f64, "variance of log10 K", |c| c.geostat.variance;
        "geostat.mean_log_perm", Chosen, f64, "mean of log10 K, K in m^2", |c| c.geostat.mean_log_perm;
        "geostat.n_modes", Published, usize, "retained KL modes", |c| c.geostat.n_modes;
        "geostat.matern_smoothness", Chosen, f64, "Matern smoothness nu", |c| c.geostat.matern_smoothness;
        "training.learning_rate", Published, f64, "ADAM learning rate", |c| c.training.learning_rate;
        "training.n_batches", Published, usize, "batches per epoch", |c| c.training.n_batches;
        "training.samples_per_batch", Published, usize, "fields per batch", |c| c.training.samples_per_batch;
        "training.samples_per_epoch", Published, usize, "must equal n_batches x samples_per_batch", |c| c.training.samples_per_epoch;
        "training.epochs_pretrain", Chosen, usize, "single-phase epochs", |c| c.training.epochs_pretrain;
        "training.epochs_finetune", Chosen, usize, "multiphase epochs", |c| c.training.epochs_finetune;
        "training.target_pressure", Chosen, f64, "prescribed critical-cell pressure, Pa", |c| c.training.target_pressure;
        "training.validation_size", Chosen, usize, "fixed validation fields", |c| c.training.validation_size;
        "eval.n_samples", Published, usize, "evaluation fields", |c| c.eval.n_samples;
        "eval.threshold", Chosen, f64, "success band |p - target|, Pa", |c| c.eval.threshold;
        "run.seed", Chosen, u64, "run seed, below 2^20", |c| c.training.seed;
        "run.threads", Chosen, usize, "worker threads, 0 = all cores", |c| c.threads;
    }
}

impl RunConfig {
    /// Parses config text and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let reg = registry();
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        let mut errors = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`", n + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            let Some(key) = reg.iter().find(|e| e.name == k) else {
                errors.push(format!("line {}: unknown key `{k}`", n + 1));
                continue;
            };
            if seen.contains(&key.name) {
                errors.push(format!("line {}: duplicate key `{k}`", n + 1));
                continue;
            }
            seen.push(key.name);
            if let Err(e) = (key.set)(&mut cfg, v) {
                errors.push(format!("line {}: {k}: {e}", n + 1));
            }
        }
        if errors.is_empty() {
            errors = cfg.problems();
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors.join("\n")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text: every key in registry order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for k in registry() {
            let _ = writeln!(out, "{} = {}", k.name, k.value(self));
        }
        out
    }

    /// Every violated invariant.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                p.push(msg);
            }
        };
        let g = &self.grid;
        need(g.nx >= 3 && g.ny >= 3, format!("grid must be at least 3x3, got {}x{}", g.nx, g.ny));
        need(g.nx.saturating_mul(g.ny) <= 1 << 16, format!("grid {}x{} exceeds 65536 cells", g.nx, g.ny));
        need(g.lx > 0.0 && g.ly > 0.0, "grid extents must be positive".into());
        let w = &self.wells;
        for (name, (i, j)) in [("injector", w.injector), ("extractor", w.extractor), ("critical", w.critical)] {
            need(i < g.nx && j < g.ny, format!("{name} cell ({i}, {j}) outside the {}x{} grid", g.nx, g.ny));
        }
        need(
            w.injector != w.extractor && w.injector != w.critical && w.extractor != w.critical,
            "injector, extractor and critical cells must differ".into(),
        );
        need(w.injection_rate > 0.0, "wells.injection_rate must be positive".into());
        let f = &self.fluid;
        need(f.mu_w > 0.0 && f.mu_nw > 0.0, "viscosities must be positive".into());
        need(f.s_wc >= 0.0 && f.s_nwr >= 0.0 && f.s_wc + f.s_nwr < 1.0, "need s_wc, s_nwr >= 0 and s_wc + s_nwr < 1".into());
        need(f.porosity > 0.0 && f.porosity <= 1.0, "porosity must lie in (0, 1]".into());
        need(f.rho_w > 0.0, "fluid.rho_w must be positive".into());
        let t = &self.transient;
        need(t.cfl_factor > 0.0 && t.cfl_factor <= 1.0, "transient.cfl_factor must lie in (0, 1]".into());
        need(t.max_steps >= 1, "transient.max_steps must be at least 1".into());
        need(t.horizon > 0.0, "transient.horizon must be positive".into());
        for (name, s) in [("initial", t.initial_saturation), ("boundary", t.boundary_saturation)] {
            need((0.0..=1.0).contains(&s), format!("transient.{name}_saturation must lie in [0, 1]"));
        }
        let s = &self.geostat;
        need(s.correlation_length > 0.0, "geostat.correlation_length must be positive".into());
        need(s.variance >= 0.0, "geostat.variance must be non-negative".into());
        need(
            s.n_modes >= 1 && s.n_modes <= g.nx.saturating_mul(g.ny),
            format!("geostat.n_modes {} outside [1, {}]", s.n_modes, g.nx.saturating_mul(g.ny)),
        );
        need(s.matern_smoothness > 0.0, "geostat.matern_smoothness must be positive".into());
        p.extend(self.training.problems());
        let mut need = |ok: bool, msg: String| {
            if !ok {
                p.push(msg);
            }
        };
        need(self.eval.n_samples >= 1, "eval.n_samples must be at least 1".into());
        need(self.eval.threshold > 0.0, "eval.threshold must be positive".into());
        need(self.threads <= 1024, "run.threads must be at most 1024".into());
        p
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
    }

    pub fn well_set(&self, grid: &Grid) -> WellSet {
        let w = &self.wells;
        WellSet {
            injector: grid.index(w.injector.0, w.injector.1),
            extractor: grid.index(w.extractor.0, w.extractor.1),
            critical: grid.index(w.critical.0, w.critical.1),
            injection_rate: w.injection_rate,
        }
    }

    pub fn impes_settings(&self) -> ImpesSettings {
        ImpesSettings {
            props: self.fluid,
            cfl_factor: self.transient.cfl_factor,
            max_steps: self.transient.max_steps,
            boundary_saturation: self.transient.boundary_saturation,
            ..ImpesSettings::default()
        }
    }

    pub fn physics_model(&self, kind: PhysicsKind) -> Result<PhysicsModel> {
        let grid = self.grid()?;
        let wells = self.well_set(&grid);
        wells.validate(&grid)?;
        Ok(PhysicsModel {
            kind,
            wells,
            grid,
            boundary: Boundary::dirichlet(self.boundary_pressure),
            impes: self.impes_settings(),
            horizon: self.transient.horizon,
            initial_saturation: self.transient.initial_saturation,
        })
    }

    /// Training context for the bundled network.
    pub fn trainer(&self) -> Result<Trainer> {
        Trainer::new(self.training, self.physics_model(PhysicsKind::Single)?, self.geostat, Architecture::LENET)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# only a comment\n\n   \n").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_are_valid() {
        assert!(RunConfig::default().problems().is_empty());
        let c = RunConfig::default();
        assert_eq!(c.wells.injection_rate, 0.031688);
        assert_eq!(c.boundary_pressure, 0.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::parse("grid.nz = 4\n").unwrap_err().to_string();
        assert!(e.contains("unknown key `grid.nz`") && e.contains("line 1"), "{e}");
    }

    #[test]
    fn duplicates_and_bad_values() {
        let e = RunConfig::parse("run.seed = 1\nrun.seed = 2\ngrid.lx = abc\nnonsense\n").unwrap_err().to_string();
        assert!(e.contains("line 2: duplicate key `run.seed`"), "{e}");
        assert!(e.contains("line 3: grid.lx"), "{e}");
        assert!(e.contains("line 4: expected"), "{e}");
        assert!(RunConfig::parse("grid.lx = inf").is_err());
    }

    #[test]
    fn invariants_listed_exhaustively() {
        let e = RunConfig::parse("fluid.porosity = 0\ntraining.samples_per_epoch = 7\ntransient.cfl_factor = 2\nrun.seed = 2000000\n")
            .unwrap_err()
            .to_string();
        for needle in ["porosity", "samples_per_epoch", "cfl_factor", "seed 2000000"] {
            assert!(e.contains(needle), "missing {needle} in {e}");
        }
    }

    #[test]
    fn round_trip() {
        let text = "geostat.covariance = matern\ngeostat.variance = 0.7\ntransient.horizon = 1e6 # desk scale\nrun.seed = 42\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.geostat.covariance_kind, CovarianceKind::Matern);
        assert_eq!(c.transient.horizon, 1e6);
        let again = RunConfig::parse(&c.serialize()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.serialize(), c.serialize());
    }

    #[test]
    fn registry_names_unique_and_documented() {
        let reg = registry();
        for (i, k) in reg.iter().enumerate() {
            assert!(!k.doc.is_empty());
            assert!(reg[i + 1..].iter().all(|o| o.name != k.name), "{}", k.name);
        }
    }

    #[test]
    fn layout_maps_to_cells() {
        let c = RunConfig::default();
        let m = c.physics_model(PhysicsKind::Single).unwrap();
        assert_eq!(m.wells, WellSet::default_for(&m.grid));
    }
}
