//! `pmflow`: sample fields, run the simulators, check gradients, train the
//! surrogate and evaluate it.
//!
//! Every subcommand writes `config.txt` (the canonical resolved config) and
//! `manifest.txt` into `--out-dir`. Failures print one line to stderr,
//!
//! ```text
//! pmflow-error kind=<kind> message=<text>
//! ```
//!
//! and exit with status 2 for configuration and usage problems, 1 otherwise.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use pmflow::config::RunConfig;
use pmflow::evaluate::{emit_report, evaluate_ensemble, EvalSettings};
use pmflow::field_io::{decode_field, encode_field};
use pmflow::fvm::PermeabilityField;
use pmflow::multi::{self, SaturationField};
use pmflow::physics::{PhysicsKind, PhysicsModel};
use pmflow::seeds::{derive_seed, Stream};
use pmflow::surrogate::checkpoint::{load_checkpoint, save_checkpoint};
use pmflow::trace_io::encode_trace;
use pmflow::training::{loss_csv, timing_csv, Counters, LossRecord, Stage, Trainer};
use pmflow::Error;

#[derive(Parser, Debug)]
#[command(name = "pmflow", version, about = "Physics-in-the-loop surrogate for injection pressure management")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` config file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `run.threads` (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "pmflow-out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Physics {
    Single,
    Multi,
}

impl From<Physics> for PhysicsKind {
    fn from(p: Physics) -> Self {
        match p {
            Physics::Single => PhysicsKind::Single,
            Physics::Multi => PhysicsKind::Multi,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw permeability fields and write them as PMFIELD files.
    SampleFields {
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// Simulate one field at a given extraction rate and print the
    /// critical-cell pressure.
    Simulate {
        #[arg(long, value_enum, default_value = "single")]
        physics: Physics,
        /// Extraction rate, m^3/s.
        #[arg(long)]
        extraction: f64,
        /// PMFIELD file; without it a field is drawn from the tooling
        /// seed stream.
        #[arg(long)]
        field: Option<PathBuf>,
        /// Index in the tooling seed stream when no file is given.
        #[arg(long, default_value_t = 0)]
        field_index: u64,
        /// Write the IMPES trace (PMTRACE1) to this path.
        #[arg(long)]
        dump_trace: Option<PathBuf>,
    },
    /// Compare the adjoint slope dp/dq with central finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value = "single")]
        physics: Physics,
        #[arg(long, default_value_t = 20)]
        cases: u64,
        /// Failure threshold; defaults to 1e-6 (single) or 1e-4 (multi).
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Stage 1: train with single-phase physics.
    Pretrain,
    /// Stage 2: continue a pretrained checkpoint with multiphase physics.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Baseline: multiphase training from a random initialization.
    TrainScratch {
        /// Defaults to epochs_pretrain + epochs_finetune.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the surrogate on fresh fields and simulate each one.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `eval.n_samples`.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_enum, default_value = "multi")]
        physics: Physics,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SampleFields { .. } => "sample-fields",
            Command::Simulate { .. } => "simulate",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Pretrain => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::TrainScratch { .. } => "train-scratch",
            Command::Evaluate { .. } => "evaluate",
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Run(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidGrid(_) | Error::InvalidInput(_) | Error::ShapeMismatch { .. } => "invalid-input",
        Error::NoConvergence { .. } | Error::CflViolation { .. } | Error::StepCapExceeded(_) | Error::Eigen(_) => "simulator",
        Error::Sample { .. } | Error::NonFinite(_) | Error::IncompleteTrace(_) => "simulator",
        Error::Checkpoint(_) => "checkpoint",
        Error::Decode(_) => "decode",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
    }
}

/// Outputs and the lines of the manifest.
struct Run {
    out_dir: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let p = self.out_dir.join(name);
        std::fs::write(&p, bytes)?;
        self.outputs.push(p.clone());
        Ok(p)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn resolve_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.training.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Failure::Usage(problems.join("; ")));
    }
    Ok(cfg)
}

fn tooling_field(cfg: &RunConfig, trainer_free_index: u64) -> Result<PermeabilityField, Failure> {
    let grid = cfg.grid()?;
    let sampler = pmflow::training::FieldSampler::new(&grid, cfg.geostat)?;
    Ok(sampler.draw(derive_seed(Stream::Tooling, cfg.training.seed, trainer_free_index))?.perm)
}

fn report_progress(r: &LossRecord) {
    println!(
        "{} epoch {:>4}  train_rmse {:.6e} Pa  val_rmse {:.6e} Pa  sims {}  ({:.1} s)",
        r.stage.as_str(),
        r.epoch,
        r.train_rmse,
        r.val_rmse,
        r.sim_calls,
        r.wall_s
    );
}

fn write_history(run: &mut Run, history: &[LossRecord]) -> Result<(), Failure> {
    run.write("loss.csv", loss_csv(history).as_bytes())?;
    run.write("timing.csv", timing_csv(history).as_bytes())?;
    Ok(())
}

fn execute(cli: &Cli, cfg: &RunConfig, run: &mut Run) -> Result<(), Failure> {
    match &cli.command {
        Command::SampleFields { count } => {
            let grid = cfg.grid()?;
            let sampler = pmflow::training::FieldSampler::new(&grid, cfg.geostat)?;
            let mut index = String::from("file,seed\n");
            for i in 0..*count {
                let seed = derive_seed(Stream::Tooling, cfg.training.seed, i);
                let s = sampler.draw(seed)?;
                let name = format!("field_{i:05}.pmf");
                run.write(&name, &encode_field(grid.nx, grid.ny, &s.perm)?)?;
                let _ = writeln!(index, "{name},{seed}");
            }
            run.write("fields.csv", index.as_bytes())?;
            println!("wrote {count} fields to {}", run.out_dir.display());
        }
        Command::Simulate { physics, extraction, field, field_index, dump_trace } => {
            let model = cfg.physics_model((*physics).into())?;
            let perm = match field {
                Some(p) => {
                    let (nx, ny, perm) = decode_field(&std::fs::read(p)?)?;
                    if (nx, ny) != (model.grid.nx, model.grid.ny) {
                        return Err(Failure::Usage(format!(
                            "field is {nx}x{ny}, config grid is {}x{}",
                            model.grid.nx, model.grid.ny
                        )));
                    }
                    perm
                }
                None => tooling_field(cfg, *field_index)?,
            };
            let p = simulate(&model, &perm, *extraction, dump_trace.as_deref(), run)?;
            println!("critical_pressure_pa {p:e}");
            run.write("simulate.txt", format!("extraction_m3s {extraction:e}\ncritical_pressure_pa {p:e}\n").as_bytes())?;
        }
        Command::Gradcheck { physics, cases, tolerance } => {
            let kind: PhysicsKind = (*physics).into();
            let tol = tolerance.unwrap_or(match kind {
                PhysicsKind::Single => 1e-6,
                PhysicsKind::Multi => 1e-4,
            });
            let model = cfg.physics_model(kind)?;
            let q_inj = model.wells.injection_rate;
            let mut worst: f64 = 0.0;
            let mut rows = String::from("case,rate_m3s,adjoint,finite_difference,relative_error\n");
            for i in 0..*cases {
                let perm = tooling_field(cfg, i)?;
                let rate = q_inj * (0.05 + 0.9 * ((i as f64 * 0.618_033_988_75).fract()));
                let (_, adj) = model.critical_pressure_and_slope(&perm, rate)?;
                let fd = model.fd_slope(&perm, rate)?;
                let rel = (adj - fd).abs() / fd.abs().max(f64::MIN_POSITIVE);
                worst = worst.max(rel);
                let _ = writeln!(rows, "{i},{rate:e},{adj:e},{fd:e},{rel:e}");
            }
            run.write("gradcheck.csv", rows.as_bytes())?;
            println!("max_relative_error {worst:e} tolerance {tol:e}");
            if !(worst <= tol) {
                return Err(Failure::Check(format!("max relative error {worst:e} exceeds {tol:e}")));
            }
        }
        Command::Pretrain => {
            let trainer = cfg.trainer()?;
            let mut s = trainer.init_surrogate()?;
            let mut history = Vec::new();
            let res = trainer.run_stage(
                &mut s,
                Stage::Pretrain,
                cfg.training.epochs_pretrain,
                &mut Counters::default(),
                &mut history,
                |r| {
                    report_progress(r);
                    ControlFlow::Continue(())
                },
            );
            write_history(run, &history)?;
            res?;
            let p = run.out_dir.join("pretrain.ckpt");
            save_checkpoint(&p, &s)?;
            run.outputs.push(p);
        }
        Command::Finetune { checkpoint } => {
            if !checkpoint.is_file() {
                return Err(Failure::Run(Error::Checkpoint(format!(
                    "pretrained checkpoint {} not found; run `pmflow pretrain` first",
                    checkpoint.display()
                ))));
            }
            let trainer = cfg.trainer()?;
            let mut s = load_checkpoint(checkpoint)?;
            trainer.check_compatible(&s)?;
            let mut history = Vec::new();
            let res = trainer.run_stage(
                &mut s,
                Stage::Finetune,
                cfg.training.epochs_finetune,
                &mut Counters::default(),
                &mut history,
                |r| {
                    report_progress(r);
                    ControlFlow::Continue(())
                },
            );
            write_history(run, &history)?;
            res?;
            let p = run.out_dir.join("finetune.ckpt");
            save_checkpoint(&p, &s)?;
            run.outputs.push(p);
        }
        Command::TrainScratch { epochs } => {
            let trainer: Trainer = cfg.trainer()?;
            let n = epochs.unwrap_or(cfg.training.epochs_pretrain + cfg.training.epochs_finetune);
            let (s, history) = trainer.run_scratch(n, |r| {
                report_progress(r);
                ControlFlow::Continue(())
            })?;
            write_history(run, &history)?;
            let p = run.out_dir.join("scratch.ckpt");
            save_checkpoint(&p, &s)?;
            run.outputs.push(p);
        }
        Command::Evaluate { checkpoint, samples, physics } => {
            let s = load_checkpoint(checkpoint)?;
            let grid = cfg.grid()?;
            let sampler = pmflow::training::FieldSampler::new(&grid, cfg.geostat)?;
            if s.params.arch.input != grid.nx || s.params.arch.input != grid.ny {
                return Err(Failure::Run(Error::Checkpoint(format!(
                    "network input {0}x{0} does not match the {1}x{2} grid",
                    s.params.arch.input, grid.nx, grid.ny
                ))));
            }
            let model = cfg.physics_model((*physics).into())?;
            let settings = EvalSettings {
                n_samples: samples.unwrap_or(cfg.eval.n_samples),
                run_seed: cfg.training.seed,
                threshold: cfg.eval.threshold,
                target: cfg.training.target_pressure,
            };
            let report = evaluate_ensemble(&s, &sampler, &model, &settings)?;
            run.outputs.extend(emit_report(&report, &run.out_dir)?);
            let m = &report.summary;
            println!(
                "samples {} failed {} mean_rate_fraction {:.4} pressure_rmse {:.6e} Pa fraction_within {:.4}",
                m.n_samples, m.n_failed, m.mean_rate_fraction, m.pressure_rmse, m.fraction_within
            );
        }
    }
    Ok(())
}

fn simulate(model: &PhysicsModel, perm: &PermeabilityField, q: f64, dump: Option<&Path>, run: &mut Run) -> Result<f64, Failure> {
    match (model.kind, dump) {
        (PhysicsKind::Multi, Some(path)) => {
            let problem = model.problem(perm)?;
            let s0 = SaturationField::uniform(model.grid.n_cells(), model.initial_saturation)?;
            let (p, trace) = multi::simulate_multiphase(&problem, &model.impes, q, model.horizon, &s0)?;
            std::fs::write(path, encode_trace(&trace)?)?;
            run.outputs.push(path.to_path_buf());
            Ok(p)
        }
        (PhysicsKind::Single, Some(_)) => Err(Failure::Usage("--dump-trace needs --physics multi".into())),
        _ => Ok(model.critical_pressure(perm, q)?),
    }
}

fn manifest(cli: &Cli, cfg: &RunConfig, canonical: &str, run: &Run) -> Result<String, Failure> {
    let mut m = String::new();
    let _ = writeln!(m, "tool pmflow {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "command {}", cli.command.name());
    let _ = writeln!(m, "args {}", std::env::args().skip(1).collect::<Vec<_>>().join(" "));
    let _ = writeln!(m, "config_sha256 {}", sha256_hex(canonical.as_bytes()));
    let _ = writeln!(m, "run_seed {}", cfg.training.seed);
    let _ = writeln!(m, "threads {}", rayon::current_num_threads());
    for p in &run.outputs {
        let name = p.strip_prefix(&run.out_dir).unwrap_or(p).display().to_string();
        let _ = writeln!(m, "output {name} sha256 {}", sha256_hex(&std::fs::read(p)?));
    }
    Ok(m)
}

fn main_inner(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve_config(&cli.common)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    std::fs::create_dir_all(&cli.common.out_dir)?;
    let canonical = cfg.serialize();
    let mut run = Run { out_dir: cli.common.out_dir.clone(), outputs: Vec::new() };
    run.write("config.txt", canonical.as_bytes())?;
    let result = execute(cli, &cfg, &mut run);
    let m = manifest(cli, &cfg, &canonical, &run)?;
    std::fs::write(run.out_dir.join("manifest.txt"), m)?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg, code) = match f {
                Failure::Usage(m) => ("config", m, 2),
                Failure::Check(m) => ("check", m, 1),
                Failure::Run(e) => (error_kind(&e), e.to_string(), 1),
            };
            eprintln!("pmflow-error kind={kind} message={}", msg.replace('\n', "; "));
            ExitCode::from(code)
        }
    }
}
