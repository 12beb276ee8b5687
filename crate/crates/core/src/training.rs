//! Physics-in-the-loop training and the two-stage curriculum.
//!
//! For every sample the surrogate proposes an extraction rate, the simulator
//! returns the critical-cell pressure and its slope in that rate, and the
//! squared pressure error is backpropagated through the simulator into the
//! network:
//!
//! ```text
//! L = Σ (p(q_nn(θ, k)) − p_target)²
//! ∂L/∂θ = Σ 2 (p − p_target) · ∂p/∂q · ∂q/∂raw · ∂raw/∂θ
//! ```
//!
//! Stage 1 uses the steady single-phase solver, stage 2 the IMPES solver.
//! Scratch mode trains with IMPES from a random initialization.

use std::ops::ControlFlow;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fvm::{Grid, PermeabilityField};
use crate::geostats::{build_kl_basis, sample_log_field, GeostatConfig, KLBasis};
use crate::physics::{PhysicsKind, PhysicsModel};
use crate::seeds::{derive_seed, Stream, MAX_INDEX};
use crate::surrogate::adam::{adam_step, OptimizerState};
use crate::surrogate::{backward, Architecture, NetworkParams, Normalization, Surrogate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// N_b
    pub n_batches: usize,
    /// N_s
    pub samples_per_batch: usize,
    pub samples_per_epoch: usize,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    /// Pa
    pub target_pressure: f64,
    pub validation_size: usize,
    /// Run seed, below 2^20.
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            n_batches: 20,
            samples_per_batch: 10,
            samples_per_epoch: 200,
            epochs_pretrain: 100,
            epochs_finetune: 30,
            target_pressure: 0.0,
            validation_size: 200,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            p.push(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.n_batches == 0 || self.samples_per_batch == 0 || self.validation_size == 0 {
            p.push("n_batches, samples_per_batch and validation_size must be at least 1".into());
        }
        if self.n_batches.checked_mul(self.samples_per_batch) != Some(self.samples_per_epoch) {
            p.push(format!(
                "samples_per_epoch {} must equal n_batches {} x samples_per_batch {}",
                self.samples_per_epoch, self.n_batches, self.samples_per_batch
            ));
        }
        if !self.target_pressure.is_finite() {
            p.push("target_pressure must be finite".into());
        }
        if self.seed > crate::seeds::MAX_RUN_SEED {
            p.push(format!("seed {} exceeds {}", self.seed, crate::seeds::MAX_RUN_SEED));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(p.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Pretrain,
    Finetune,
    Scratch,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Scratch => "scratch",
        }
    }

    pub fn physics(&self) -> PhysicsKind {
        match self {
            Stage::Pretrain => PhysicsKind::Single,
            Stage::Finetune | Stage::Scratch => PhysicsKind::Multi,
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Stage::Pretrain => 1,
            Stage::Finetune => 2,
            Stage::Scratch => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based within the stage.
    pub epoch: usize,
    pub stage: Stage,
    /// Pa
    pub train_rmse: f64,
    /// Pa
    pub val_rmse: f64,
    /// Cumulative simulations of either kind.
    pub sim_calls: u64,
    /// Cumulative multiphase simulations.
    pub multi_calls: u64,
    /// Seconds since the run started.
    pub wall_s: f64,
}

/// Sum of squared deviations from the target.
pub fn loss(pressures: &[f64], target: f64) -> Result<f64> {
    if pressures.is_empty() {
        return Err(Error::InvalidInput("loss of an empty batch".into()));
    }
    if let Some(p) = pressures.iter().find(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("simulated pressure {p}")));
    }
    Ok(pressures.iter().map(|p| (p - target) * (p - target)).sum())
}

/// `√(L / (N_b · N_s))`
pub fn rmse(loss: f64, n_batches: usize, samples_per_batch: usize) -> f64 {
    (loss / (n_batches * samples_per_batch) as f64).sqrt()
}

/// A permeability realization and its network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub perm: PermeabilityField,
    pub input: Vec<f64>,
}

/// Draws KL realizations by seed.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    pub basis: KLBasis,
    pub geostat: GeostatConfig,
}

impl FieldSampler {
    pub fn new(grid: &Grid, geostat: GeostatConfig) -> Result<Self> {
        Ok(Self { basis: build_kl_basis(grid, &geostat)?, geostat })
    }

    pub fn normalization(&self) -> Normalization {
        Normalization { mean_log_perm: self.geostat.mean_log_perm, std_log_perm: self.geostat.input_std() }
    }

    pub fn draw(&self, seed: u64) -> Result<Sample> {
        let log = sample_log_field(&self.basis, &self.geostat, seed);
        let input = self.normalization().apply_log(&log);
        let perm = PermeabilityField::new(log.into_iter().map(|l| 10f64.powf(l)).collect())
            .map_err(|e| Error::Sample { seed, source: Box::new(e) })?;
        Ok(Sample { seed, perm, input })
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    /// m³/s
    pub rate: f64,
    /// Pa
    pub pressure: f64,
    /// ∂(p − target)²/∂θ
    pub gradient: Option<NetworkParams>,
}

/// Surrogate rate, simulation and, on request, the parameter gradient of the
/// squared pressure error.
pub fn evaluate_sample(
    model: &PhysicsModel,
    surrogate: &Surrogate,
    sample: &Sample,
    target: f64,
    with_gradient: bool,
) -> Result<SampleOutcome> {
    let run = || -> Result<SampleOutcome> {
        let pred = surrogate.predict_normalized(&sample.input)?;
        if with_gradient {
            let (p, slope) = model.critical_pressure_and_slope(&sample.perm, pred.rate)?;
            if !(p.is_finite() && slope.is_finite()) {
                return Err(Error::NonFinite(format!("pressure {p}, slope {slope}")));
            }
            let upstream = 2.0 * (p - target) * slope * pred.rate_slope;
            let (g, _) = backward(&surrogate.params, &pred.cache, upstream);
            Ok(SampleOutcome { rate: pred.rate, pressure: p, gradient: Some(g) })
        } else {
            let p = model.critical_pressure(&sample.perm, pred.rate)?;
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("pressure {p}")));
            }
            Ok(SampleOutcome { rate: pred.rate, pressure: p, gradient: None })
        }
    };
    run().map_err(|e| Error::Sample { seed: sample.seed, source: Box::new(e) })
}

/// Batch loss and its gradient. Samples run in parallel; the gradient is
/// summed in sample order so the result does not depend on scheduling.
pub fn batch_loss_and_gradient(
    model: &PhysicsModel,
    surrogate: &Surrogate,
    samples: &[Sample],
    target: f64,
) -> Result<(f64, NetworkParams)> {
    let outcomes: Vec<Result<SampleOutcome>> =
        samples.par_iter().map(|s| evaluate_sample(model, surrogate, s, target, true)).collect();
    let mut grad = NetworkParams { arch: surrogate.params.arch, data: vec![0.0; surrogate.params.data.len()] };
    let mut pressures = Vec::with_capacity(samples.len());
    for o in outcomes {
        let o = o?;
        pressures.push(o.pressure);
        for (a, b) in grad.data.iter_mut().zip(&o.gradient.expect("requested").data) {
            *a += b;
        }
    }
    Ok((loss(&pressures, target)?, grad))
}

/// Simulator invocations so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub sim_calls: u64,
    pub multi_calls: u64,
}

impl Counters {
    fn add(&mut self, kind: PhysicsKind, n: usize) {
        self.sim_calls += n as u64;
        if kind == PhysicsKind::Multi {
            self.multi_calls += n as u64;
        }
    }
}

/// Outcome of the full two-stage workflow.
#[derive(Debug, Clone)]
pub struct CurriculumOutcome {
    pub pretrained: Surrogate,
    pub finetuned: Surrogate,
    pub history: Vec<LossRecord>,
}

/// Fixed context of a training run: configuration, physics, field sampler
/// and the validation set.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainingConfig,
    pub model: PhysicsModel,
    pub sampler: FieldSampler,
    pub arch: Architecture,
    validation: Vec<Sample>,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainingConfig, model: PhysicsModel, geostat: GeostatConfig, arch: Architecture) -> Result<Self> {
        config.validate()?;
        arch.validate()?;
        if model.grid.nx != arch.input || model.grid.ny != arch.input {
            return Err(Error::InvalidInput(format!(
                "network expects a {0}x{0} field, grid is {1}x{2}",
                arch.input, model.grid.nx, model.grid.ny
            )));
        }
        let sampler = FieldSampler::new(&model.grid, geostat)?;
        let validation = (0..config.validation_size as u64)
            .map(|i| sampler.draw(derive_seed(Stream::Validation, config.seed, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, model, sampler, arch, validation, started: Instant::now() })
    }

    pub fn validation_set(&self) -> &[Sample] {
        &self.validation
    }

    pub fn output_scale(&self) -> f64 {
        self.model.wells.injection_rate
    }

    /// Fresh network with seeded Glorot weights.
    pub fn init_surrogate(&self) -> Result<Surrogate> {
        Ok(Surrogate {
            params: NetworkParams::init(self.arch, derive_seed(Stream::NetworkInit, self.config.seed, 0))?,
            normalization: self.sampler.normalization(),
            output_scale: self.output_scale(),
        })
    }

    /// Rejects a surrogate built for a different architecture, input
    /// normalization or rate scale.
    pub fn check_compatible(&self, s: &Surrogate) -> Result<()> {
        if s.params.arch != self.arch {
            return Err(Error::Checkpoint(format!("architecture {:?} differs from {:?}", s.params.arch, self.arch)));
        }
        if s.normalization != self.sampler.normalization() {
            return Err(Error::Checkpoint(format!(
                "normalization {:?} differs from {:?}",
                s.normalization,
                self.sampler.normalization()
            )));
        }
        if s.output_scale != self.output_scale() {
            return Err(Error::Checkpoint(format!("output scale {} differs from {}", s.output_scale, self.output_scale())));
        }
        Ok(())
    }

    fn physics(&self, kind: PhysicsKind) -> PhysicsModel {
        self.model.with_kind(kind)
    }

    /// Validation RMSE (Pa) under the given physics.
    pub fn validation_rmse(&self, s: &Surrogate, kind: PhysicsKind, counters: &mut Counters) -> Result<f64> {
        let model = self.physics(kind);
        let t = self.config.target_pressure;
        let pressures = self
            .validation
            .par_iter()
            .map(|v| evaluate_sample(&model, s, v, t, false).map(|o| o.pressure))
            .collect::<Result<Vec<_>>>()?;
        counters.add(kind, pressures.len());
        Ok((loss(&pressures, t)? / pressures.len() as f64).sqrt())
    }

    /// Seed of training sample `index` of `epoch` (1-based) in `stage`.
    /// Every (stage, epoch, index) gets its own field.
    pub fn training_seed(&self, stage: Stage, epoch: usize, index: usize) -> u64 {
        let within = (epoch as u64 - 1) * self.config.samples_per_epoch as u64 + index as u64;
        assert!(within < 1 << 36, "training sample index overflow");
        let idx = (stage.tag() << 36) | within;
        debug_assert!(idx <= MAX_INDEX);
        derive_seed(Stream::Training, self.config.seed, idx)
    }

    /// One epoch: `n_batches` ADAM steps on fresh fields, then validation.
    pub fn train_epoch(
        &self,
        s: &mut Surrogate,
        opt: &mut OptimizerState,
        stage: Stage,
        epoch: usize,
        counters: &mut Counters,
    ) -> Result<LossRecord> {
        let kind = stage.physics();
        let model = self.physics(kind);
        let c = &self.config;
        let mut epoch_loss = 0.0;
        for b in 0..c.n_batches {
            let samples = (0..c.samples_per_batch)
                .map(|j| self.sampler.draw(self.training_seed(stage, epoch, b * c.samples_per_batch + j)))
                .collect::<Result<Vec<_>>>()?;
            let (l, g) = batch_loss_and_gradient(&model, s, &samples, c.target_pressure)?;
            counters.add(kind, samples.len());
            epoch_loss += l;
            adam_step(&mut s.params, &g, opt, c.learning_rate)?;
        }
        let val_rmse = self.validation_rmse(s, kind, counters)?;
        Ok(LossRecord {
            epoch,
            stage,
            train_rmse: rmse(epoch_loss, c.n_batches, c.samples_per_batch),
            val_rmse,
            sim_calls: counters.sim_calls,
            multi_calls: counters.multi_calls,
            wall_s: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Trains `epochs` epochs of one stage with fresh optimizer moments.
    /// `observe` sees each record and may stop the stage early.
    pub fn run_stage(
        &self,
        s: &mut Surrogate,
        stage: Stage,
        epochs: usize,
        counters: &mut Counters,
        history: &mut Vec<LossRecord>,
        mut observe: impl FnMut(&LossRecord) -> ControlFlow<()>,
    ) -> Result<()> {
        self.check_compatible(s)?;
        let mut opt = OptimizerState::for_params(&s.params);
        for epoch in 1..=epochs {
            let rec = self.train_epoch(s, &mut opt, stage, epoch, counters)?;
            history.push(rec);
            if observe(&rec).is_break() {
                break;
            }
        }
        Ok(())
    }

    /// Pretraining with single-phase physics, then fine-tuning of the same
    /// weights with multiphase physics.
    pub fn run_curriculum(&self, mut observe: impl FnMut(&LossRecord)) -> Result<CurriculumOutcome> {
        let mut s = self.init_surrogate()?;
        let mut counters = Counters::default();
        let mut history = Vec::new();
        let mut obs = |r: &LossRecord| {
            observe(r);
            ControlFlow::Continue(())
        };
        self.run_stage(&mut s, Stage::Pretrain, self.config.epochs_pretrain, &mut counters, &mut history, &mut obs)?;
        let pretrained = s.clone();
        self.run_stage(&mut s, Stage::Finetune, self.config.epochs_finetune, &mut counters, &mut history, &mut obs)?;
        Ok(CurriculumOutcome { pretrained, finetuned: s, history })
    }

    /// Multiphase training from a random initialization.
    pub fn run_scratch(&self, epochs: usize, mut observe: impl FnMut(&LossRecord) -> ControlFlow<()>) -> Result<(Surrogate, Vec<LossRecord>)> {
        let mut s = self.init_surrogate()?;
        let mut history = Vec::new();
        self.run_stage(&mut s, Stage::Scratch, epochs, &mut Counters::default(), &mut history, &mut observe)?;
        Ok((s, history))
    }
}

/// Columns: epoch, stage, train_rmse_pa, val_rmse_pa, sim_calls,
/// multi_calls. Wall-clock time lives in [`timing_csv`] so that this file is
/// reproducible.
pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("epoch,stage,train_rmse_pa,val_rmse_pa,sim_calls,multi_calls\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.stage.as_str(),
            r.train_rmse,
            r.val_rmse,
            r.sim_calls,
            r.multi_calls
        ));
    }
    out
}

pub fn timing_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("epoch,stage,wall_s\n");
    for r in history {
        out.push_str(&format!("{},{},{:.3}\n", r.epoch, r.stage.as_str(), r.wall_s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[3.0, 3.0], 3.0).unwrap(), 0.0);
        assert_eq!(loss(&[1e5], 0.0).unwrap(), 1e10);
        assert_eq!(loss(&[2.0, -3.0], 0.0).unwrap(), 13.0);
        assert!(loss(&[], 0.0).is_err());
        assert!(loss(&[f64::NAN], 0.0).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(4.0, 2, 2), 1.0);
        assert_eq!(rmse(0.0, 20, 10), 0.0);
        assert!((rmse(2e8, 20, 10) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn config_checks() {
        assert!(TrainingConfig::default().validate().is_ok());
        let bad = TrainingConfig { samples_per_epoch: 199, learning_rate: -1.0, ..Default::default() };
        let p = bad.problems();
        assert_eq!(p.len(), 2, "{p:?}");
    }

    #[test]
    fn csv_layout() {
        let r = LossRecord {
            epoch: 3,
            stage: Stage::Finetune,
            train_rmse: 1.5,
            val_rmse: 0.25,
            sim_calls: 1200,
            multi_calls: 400,
            wall_s: 9.87654,
        };
        assert_eq!(loss_csv(&[r]), "epoch,stage,train_rmse_pa,val_rmse_pa,sim_calls,multi_calls\n3,finetune,1.5,0.25,1200,400\n");
        assert_eq!(timing_csv(&[r]), "epoch,stage,wall_s\n3,finetune,9.877\n");
    }
}
