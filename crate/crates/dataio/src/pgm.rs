//! 16-bit binary PGM export of amplitude images.

use std::path::Path;

use handsar_core::{ComplexGrid, RealGrid};

use crate::binfmt::{atomic_write, read_bytes};
use crate::error::{IoError, Result};

pub const PGM_MAXVAL: u16 = 65535;

/// Quantized min-max amplitude; image rows are grid rows. A constant image
/// exports as all zeros.
pub fn encode_amplitude_pgm(grid: &ComplexGrid) -> Vec<u8> {
    let amp = grid.amplitude().minmax_normalized();
    let (rows, cols) = amp.dims();
    let mut out = format!("P5\n{cols} {rows}\n{PGM_MAXVAL}\n").into_bytes();
    out.reserve(2 * rows * cols);
    for &a in amp.as_slice() {
        let v = (a.clamp(0.0, 1.0) * PGM_MAXVAL as f64).round() as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn export_amplitude_image(grid: &ComplexGrid, path: &Path) -> Result<()> {
    atomic_write(path, &encode_amplitude_pgm(grid))
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(IoError::Invalid("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

/// Decodes a 16-bit P5 image into values in `[0, 1]`.
pub fn decode_pgm16(bytes: &[u8]) -> Result<RealGrid> {
    let mut pos = 0;
    if token(bytes, &mut pos)? != b"P5" {
        return Err(IoError::Invalid("not a binary PGM".into()));
    }
    let mut num = || -> Result<usize> {
        std::str::from_utf8(token(bytes, &mut pos)?)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IoError::Invalid("bad PGM header field".into()))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval != PGM_MAXVAL as usize {
        return Err(IoError::Invalid(format!("expected maxval {PGM_MAXVAL}, got {maxval}")));
    }
    pos += 1;
    let need = 2 * w * h;
    if bytes.len() < pos + need {
        return Err(IoError::Truncated {
            what: "pgm",
            needed: pos + need,
            available: bytes.len(),
        });
    }
    let px = &bytes[pos..pos + need];
    Ok(RealGrid::from_fn(h, w, |r, c| {
        let k = 2 * (r * w + c);
        u16::from_be_bytes([px[k], px[k + 1]]) as f64 / PGM_MAXVAL as f64
    }))
}

pub fn read_pgm16(path: &Path) -> Result<RealGrid> {
    decode_pgm16(&read_bytes(path)?)
}
