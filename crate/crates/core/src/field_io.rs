//! Binary permeability-field files.
//!
//! Layout, byte for byte:
//!
//! ```text
//! PMFIELD 1\n
//! nx <decimal>\n
//! ny <decimal>\n
//! order row-major\n
//! data f64le\n
//! end\n
//! <nx*ny IEEE-754 binary64 values, little-endian>
//! ```
//!
//! Decimal fields have no sign, no leading zeros and no padding. Values are
//! cell permeabilities in m², cell `(i, j)` at position `j * nx + i`. Nothing
//! may follow the last value.

use crate::error::{Error, Result};
use crate::fvm::PermeabilityField;

const MAGIC: &str = "PMFIELD 1";
/// Largest accepted cell count; keeps hostile headers from driving
/// allocations.
pub const MAX_CELLS: usize = 1 << 24;

pub fn encode_field(nx: usize, ny: usize, field: &PermeabilityField) -> Result<Vec<u8>> {
    if nx == 0 || ny == 0 || nx.checked_mul(ny) != Some(field.len()) {
        return Err(Error::ShapeMismatch { expected: nx.saturating_mul(ny), actual: field.len() });
    }
    let mut out = format!("{MAGIC}\nnx {nx}\nny {ny}\norder row-major\ndata f64le\nend\n").into_bytes();
    out.reserve(field.len() * 8);
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .take(64)
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Decode("unterminated or oversized header line".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::Decode("header is not UTF-8".into()))
}

fn parse_dim(line: &str, key: &str) -> Result<usize> {
    let v = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::Decode(format!("expected `{key} <n>`, got `{line}`")))?;
    if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) || (v.len() > 1 && v.starts_with('0')) {
        return Err(Error::Decode(format!("bad {key} value `{v}`")));
    }
    let n: usize = v.parse().map_err(|_| Error::Decode(format!("bad {key} value `{v}`")))?;
    if n == 0 {
        return Err(Error::Decode(format!("{key} must be positive")));
    }
    Ok(n)
}

/// Decodes a field file into `(nx, ny, field)`.
pub fn decode_field(bytes: &[u8]) -> Result<(usize, usize, PermeabilityField)> {
    let mut pos = 0;
    if take_line(bytes, &mut pos)? != MAGIC {
        return Err(Error::Decode("missing PMFIELD 1 magic".into()));
    }
    let nx = parse_dim(take_line(bytes, &mut pos)?, "nx")?;
    let ny = parse_dim(take_line(bytes, &mut pos)?, "ny")?;
    for want in ["order row-major", "data f64le", "end"] {
        let got = take_line(bytes, &mut pos)?;
        if got != want {
            return Err(Error::Decode(format!("expected `{want}`, got `{got}`")));
        }
    }
    let n = nx
        .checked_mul(ny)
        .filter(|n| *n <= MAX_CELLS)
        .ok_or_else(|| Error::Decode(format!("{nx}x{ny} field is too large")))?;
    let payload = &bytes[pos..];
    if payload.len() != n * 8 {
        return Err(Error::Decode(format!("expected {} data bytes, found {}", n * 8, payload.len())));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let field = PermeabilityField::new(values).map_err(|e| Error::Decode(e.to_string()))?;
    Ok((nx, ny, field))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_header_bytes() {
        let f = PermeabilityField::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_field(3, 2, &f).unwrap();
        let header = b"PMFIELD 1\nnx 3\nny 2\norder row-major\ndata f64le\nend\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 48);
        assert_eq!(&bytes[header.len()..header.len() + 8], &1.0f64.to_le_bytes());
        let (nx, ny, g) = decode_field(&bytes).unwrap();
        assert_eq!((nx, ny), (3, 2));
        assert_eq!(g, f);
    }

    #[test]
    fn rejects_malformed() {
        let f = PermeabilityField::new(vec![1.0; 4]).unwrap();
        let good = encode_field(2, 2, &f).unwrap();
        assert!(decode_field(&good[..good.len() - 1]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_field(&extra).is_err());
        assert!(decode_field(b"PMFIELD 1\nnx 02\n").is_err());
        assert!(decode_field(b"PMFIELD 1\nnx 99999999999\nny 99999999999\norder row-major\ndata f64le\nend\n").is_err());
        let mut neg = good.clone();
        let at = neg.len() - 8;
        neg[at..].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(decode_field(&neg).is_err());
        assert!(encode_field(3, 2, &f).is_err());
    }
}
