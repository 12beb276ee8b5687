//! Checkpoint files.
//!
//! A text header followed by the parameters, byte for byte:
//!
//! ```text
//! PMCKPT 1\n
//! arch lenet input=24 kernel=5 c1=6 c2=16 hidden1=120 hidden2=84\n
//! tensor conv1.weight 6x1x5x5\n
//! tensor conv1.bias 6\n
//! ...                                  (one line per tensor, declaration order)
//! tensor dense3.bias 1\n
//! input_mean 0x<16 lowercase hex digits>\n
//! input_std 0x<16 hex digits>\n
//! output_scale 0x<16 hex digits>\n
//! data f64le <parameter count>\n
//! end\n
//! <parameter count IEEE-754 binary64 values, little-endian>
//! ```
//!
//! Floating-point constants are stored as their raw bit patterns so that a
//! round trip is exact. The decoder rebuilds the canonical header from the
//! parsed architecture and constants and rejects any byte difference.

use crate::error::{Error, Result};
use crate::surrogate::{Architecture, NetworkParams, Normalization, Surrogate};

const MAGIC: &str = "PMCKPT 1";
const MAX_HEADER: usize = 4096;
/// Upper bound on the parameter count a header may announce.
pub const MAX_PARAMS: usize = 1 << 26;

fn header(arch: &Architecture, norm: &Normalization, output_scale: f64) -> String {
    let mut h = format!(
        "{MAGIC}\narch lenet input={} kernel={} c1={} c2={} hidden1={} hidden2={}\n",
        arch.input, arch.kernel, arch.c1, arch.c2, arch.hidden1, arch.hidden2
    );
    for (name, shape) in arch.tensors() {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        h.push_str(&format!("tensor {name} {}\n", dims.join("x")));
    }
    for (key, v) in [("input_mean", norm.mean_log_perm), ("input_std", norm.std_log_perm), ("output_scale", output_scale)] {
        h.push_str(&format!("{key} 0x{:016x}\n", v.to_bits()));
    }
    h.push_str(&format!("data f64le {}\nend\n", arch.param_count()));
    h
}

fn check_constants(norm: &Normalization, output_scale: f64) -> Result<()> {
    let ok = norm.mean_log_perm.is_finite()
        && norm.std_log_perm.is_finite()
        && norm.std_log_perm > 0.0
        && output_scale.is_finite()
        && output_scale > 0.0;
    if ok {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("invalid normalization {norm:?} or output scale {output_scale}")))
    }
}

pub fn encode_checkpoint(s: &Surrogate) -> Result<Vec<u8>> {
    s.params.arch.validate()?;
    check_constants(&s.normalization, s.output_scale)?;
    if s.params.data.len() != s.params.arch.param_count() {
        return Err(Error::ShapeMismatch { expected: s.params.arch.param_count(), actual: s.params.data.len() });
    }
    if !s.params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    let mut out = header(&s.params.arch, &s.normalization, s.output_scale).into_bytes();
    out.reserve(s.params.data.len() * 8);
    for v in &s.params.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_usize(v: &str) -> Result<usize> {
    if v.is_empty() || v.len() > 6 || !v.bytes().all(|b| b.is_ascii_digit()) || (v.len() > 1 && v.starts_with('0')) {
        return Err(bad(format!("bad integer `{v}`")));
    }
    v.parse().map_err(|_| bad(format!("bad integer `{v}`")))
}

fn parse_bits(line: Option<&str>, key: &str) -> Result<f64> {
    let line = line.ok_or_else(|| bad(format!("missing {key}")))?;
    let hex = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(" 0x"))
        .filter(|h| h.len() == 16)
        .ok_or_else(|| bad(format!("expected `{key} 0x<16 hex>`, got `{line}`")))?;
    u64::from_str_radix(hex, 16).map(f64::from_bits).map_err(|_| bad(format!("bad hex in `{line}`")))
}

/// Decodes and validates a checkpoint.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Surrogate> {
    let end_marker = b"\nend\n";
    let head_len = bytes
        .windows(end_marker.len())
        .take(MAX_HEADER)
        .position(|w| w == end_marker)
        .map(|p| p + end_marker.len())
        .ok_or_else(|| bad("header terminator not found"))?;
    let text = std::str::from_utf8(&bytes[..head_len]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing PMCKPT 1 magic"));
    }
    let arch_line = lines.next().ok_or_else(|| bad("missing arch line"))?;
    let fields = arch_line.strip_prefix("arch lenet ").ok_or_else(|| bad(format!("unsupported architecture `{arch_line}`")))?;
    let mut dims = [0usize; 6];
    let keys = ["input", "kernel", "c1", "c2", "hidden1", "hidden2"];
    let parts: Vec<&str> = fields.split(' ').collect();
    if parts.len() != keys.len() {
        return Err(bad(format!("arch line needs {} fields", keys.len())));
    }
    for ((slot, key), part) in dims.iter_mut().zip(keys).zip(parts) {
        let v = part
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| bad(format!("expected `{key}=<n>`, got `{part}`")))?;
        *slot = parse_usize(v)?;
    }
    let arch = Architecture { input: dims[0], kernel: dims[1], c1: dims[2], c2: dims[3], hidden1: dims[4], hidden2: dims[5] };
    arch.validate().map_err(|e| bad(e.to_string()))?;
    let n = arch.param_count();
    if n > MAX_PARAMS {
        return Err(bad(format!("{n} parameters exceeds limit")));
    }
    let mut rest = lines.skip(arch.tensors().len());
    let norm = Normalization {
        mean_log_perm: parse_bits(rest.next(), "input_mean")?,
        std_log_perm: parse_bits(rest.next(), "input_std")?,
    };
    let output_scale = parse_bits(rest.next(), "output_scale")?;
    check_constants(&norm, output_scale)?;
    if header(&arch, &norm, output_scale).as_bytes() != &bytes[..head_len] {
        return Err(bad("header does not match the canonical layout for its architecture"));
    }
    let payload = &bytes[head_len..];
    if payload.len() != n * 8 {
        return Err(bad(format!("expected {} data bytes, found {}", n * 8, payload.len())));
    }
    let data: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    let params = NetworkParams { arch, data };
    if !params.is_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok(Surrogate { params, normalization: norm, output_scale })
}

pub fn save_checkpoint(path: &std::path::Path, s: &Surrogate) -> Result<()> {
    std::fs::write(path, encode_checkpoint(s)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Surrogate> {
    let bytes = std::fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
