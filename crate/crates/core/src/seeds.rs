//! Seed-space partitioning.
//!
//! Every random draw in a run is keyed by `(stream, run seed, index)` packed
//! into one `u64`:
//!
//! ```text
//! bits 63..60  stream tag
//! bits 59..40  run seed (must be < 2^20)
//! bits 39..0   index within the stream
//! ```
//!
//! Training, validation and evaluation fields therefore never share a seed,
//! whatever the run seed or the number of samples drawn.

pub const MAX_RUN_SEED: u64 = (1 << 20) - 1;
pub const MAX_INDEX: u64 = (1 << 40) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Training = 1,
    Validation = 2,
    Evaluation = 3,
    NetworkInit = 4,
    Tooling = 5,
}

pub fn derive_seed(stream: Stream, run_seed: u64, index: u64) -> u64 {
    assert!(run_seed <= MAX_RUN_SEED, "run seed {run_seed} exceeds 2^20 - 1");
    assert!(index <= MAX_INDEX, "sample index {index} exceeds 2^40 - 1");
    ((stream as u64) << 60) | (run_seed << 40) | index
}
