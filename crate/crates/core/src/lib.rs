//! Differentiable reservoir flow simulators and a convolutional surrogate
//! trained through them to control pressure at a monitored location.
//!
//! The crate is organized bottom-up:
//!
//! * [`fvm`] and [`linalg`]: grid, two-point flux systems, PCG solver
//! * [`geostats`]: Karhunen–Loève permeability fields and their file format
//! * [`single`] and [`multi`]: steady single-phase and IMPES two-phase
//!   simulators with adjoint gradients of the critical-cell pressure
//! * [`surrogate`]: the LeNet-style network, ADAM and checkpoints
//! * [`training`]: physics-in-the-loop training and the two-stage curriculum
//! * [`evaluate`]: ensemble evaluation and reports
//! * [`config`]: the `key = value` run configuration

pub mod config;
pub mod error;
pub mod field_io;
pub mod evaluate;
pub mod fvm;
pub mod geostats;
pub mod linalg;
pub mod multi;
pub mod physics;
pub mod problem;
pub mod seeds;
pub mod single;
pub mod surrogate;
pub mod trace_io;
pub mod training;

pub use error::{Error, Result};
