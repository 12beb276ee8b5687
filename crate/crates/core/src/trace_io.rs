//! Binary dump of an IMPES trace, for debugging.
//!
//! All integers are u64 little-endian, all reals IEEE-754 binary64
//! little-endian:
//!
//! ```text
//! "PMTRACE1"                     8 bytes
//! n_cells, n_faces, n_steps      3 × u64
//! per step:
//!   dt                           f64, seconds, positive
//!   saturation                   n_cells × f64
//!   pressure                     n_cells × f64, Pa
//!   fluxes                       n_faces × f64, m³/s, grid face order
//! final saturation               n_cells × f64
//! final pressure                 n_cells × f64
//! ```
//!
//! The record is the state at the start of the step. Nothing may follow the
//! final pressure. A trace without steps has `n_faces = 0`.

use crate::error::{Error, Result};
use crate::multi::{SimulationTrace, StepRecord};

const MAGIC: &[u8; 8] = b"PMTRACE1";

pub fn encode_trace(trace: &SimulationTrace) -> Result<Vec<u8>> {
    let n_cells = trace.final_saturation.len();
    let n_faces = trace.steps.first().map_or(0, |s| s.fluxes.len());
    if trace.final_pressure.len() != n_cells {
        return Err(Error::ShapeMismatch { expected: n_cells, actual: trace.final_pressure.len() });
    }
    for s in &trace.steps {
        for (len, want) in [(s.saturation.len(), n_cells), (s.pressure.len(), n_cells), (s.fluxes.len(), n_faces)] {
            if len != want {
                return Err(Error::ShapeMismatch { expected: want, actual: len });
            }
        }
    }
    let mut out = Vec::with_capacity(32 + trace.steps.len() * 8 * (1 + 2 * n_cells + n_faces) + 16 * n_cells);
    out.extend_from_slice(MAGIC);
    for v in [n_cells, n_faces, trace.steps.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    for s in &trace.steps {
        put(&[s.dt]);
        put(&s.saturation);
        put(&s.pressure);
        put(&s.fluxes);
    }
    put(&trace.final_saturation);
    put(&trace.final_pressure);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u64(&mut self) -> u64 {
        let v = u64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().expect("8 bytes"));
        self.pos += 8;
        v
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.bytes[self.pos..self.pos + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        self.pos += 8 * n;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Decode("non-finite value in trace".into()));
        }
        Ok(v)
    }
}

pub fn decode_trace(bytes: &[u8]) -> Result<SimulationTrace> {
    if bytes.len() < 32 || &bytes[..8] != MAGIC {
        return Err(Error::Decode("missing PMTRACE1 header".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let (n_cells, n_faces, n_steps) = (r.u64(), r.u64(), r.u64());
    // exact size check before any allocation
    let per_step = n_cells.checked_mul(2).and_then(|v| v.checked_add(n_faces)).and_then(|v| v.checked_add(1));
    let total = per_step
        .and_then(|p| p.checked_mul(n_steps))
        .and_then(|v| v.checked_add(n_cells.checked_mul(2)?))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(32));
    if total != Some(bytes.len() as u64) {
        return Err(Error::Decode(format!(
            "{} bytes do not match {n_cells} cells, {n_faces} faces, {n_steps} steps",
            bytes.len()
        )));
    }
    if n_steps == 0 && n_faces != 0 {
        return Err(Error::Decode("a trace without steps must declare 0 faces".into()));
    }
    let (n_cells, n_faces) = (n_cells as usize, n_faces as usize);
    let mut steps = Vec::with_capacity(n_steps as usize);
    for i in 0..n_steps {
        let dt = r.reals(1)?[0];
        if dt <= 0.0 {
            return Err(Error::Decode(format!("step {i} has non-positive dt {dt}")));
        }
        steps.push(StepRecord { dt, saturation: r.reals(n_cells)?, pressure: r.reals(n_cells)?, fluxes: r.reals(n_faces)? });
    }
    let final_saturation = r.reals(n_cells)?;
    let final_pressure = r.reals(n_cells)?;
    Ok(SimulationTrace { steps, final_saturation, final_pressure })
}
