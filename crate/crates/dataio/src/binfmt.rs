//! `CSG1` complex grids and `TRJ1` trajectories: little-endian, bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use handsar_core::phase_error::Trajectory;
use handsar_core::{Complex64, ComplexGrid};

use crate::error::{IoError, Result};

pub const GRID_MAGIC: [u8; 4] = *b"CSG1";
pub const TRAJECTORY_MAGIC: [u8; 4] = *b"TRJ1";
const GRID_HEADER: usize = 16;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| IoError::Invalid(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        IoError::io(path, e)
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(IoError::Truncated {
            what: self.what,
            needed: self.pos.saturating_add(n),
            available: self.bytes.len(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found = self.bytes[..self.bytes.len().min(4)].to_vec();
        if found != expected {
            return Err(IoError::BadMagic { expected, found });
        }
        self.pos = 4;
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        out
    }
}

pub fn encode_grid(grid: &ComplexGrid) -> Result<Vec<u8>> {
    let (rows, cols) = grid.dims();
    let to_u32 = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| IoError::DimensionOverflow(format!("{name} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(GRID_HEADER + 8 * grid.len());
    out.extend_from_slice(&GRID_MAGIC);
    out.extend_from_slice(&to_u32(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols, "cols")?.to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    for v in grid.as_slice() {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<ComplexGrid> {
    let mut r = Reader::new(bytes, "grid");
    r.magic(GRID_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let channels = r.u32()?;
    if channels != 2 {
        return Err(IoError::Invalid(format!("grid has {channels} channels, expected 2")));
    }
    let cells = rows
        .checked_mul(cols)
        .filter(|c| c.checked_mul(8).is_some())
        .ok_or_else(|| IoError::DimensionOverflow(format!("{rows}x{cols} grid is too large")))?;
    let payload = r.take(cells * 8)?;
    if r.remaining() != 0 {
        return Err(IoError::Invalid(format!("{} trailing bytes after grid payload", r.remaining())));
    }
    let f = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap()) as f64;
    let data = payload
        .chunks_exact(8)
        .map(|c| Complex64::new(f(&c[..4]), f(&c[4..])))
        .collect();
    Ok(ComplexGrid::new(rows, cols, data)?)
}

/// Stored as 32-bit floats; values are rounded to `f32` on write.
pub fn write_grid(path: &Path, grid: &ComplexGrid) -> Result<()> {
    atomic_write(path, &encode_grid(grid)?)
}

pub fn read_grid(path: &Path) -> Result<ComplexGrid> {
    decode_grid(&read_bytes(path)?)
}

pub fn encode_trajectory(traj: &Trajectory) -> Result<Vec<u8>> {
    if traj.is_empty() {
        return Err(IoError::Invalid("trajectory must hold at least one sample".into()));
    }
    let count = u32::try_from(traj.len())
        .map_err(|_| IoError::DimensionOverflow(format!("trajectory length {} does not fit in u32", traj.len())))?;
    let mut out = Vec::with_capacity(8 + 8 * traj.len());
    out.extend_from_slice(&TRAJECTORY_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for v in &traj.dz {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// The seed is not part of the format; decoded trajectories carry seed 0.
pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    let mut r = Reader::new(bytes, "trajectory");
    r.magic(TRAJECTORY_MAGIC)?;
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(IoError::Invalid("trajectory must hold at least one sample".into()));
    }
    if r.remaining() != count * 8 {
        return Err(IoError::Invalid(format!(
            "trajectory declares {count} samples but payload holds {} bytes",
            r.remaining()
        )));
    }
    let dz = r
        .rest()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Trajectory::new(dz, 0))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    atomic_write(path, &encode_trajectory(traj)?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    decode_trajectory(&read_bytes(path)?)
}
