//! The `VOLZ` raw volume container.
//!
//! ```text
//! "VOLZ" | u32 version=1 | u32 nx, ny, nz | u32 grid_count
//! per grid: u16 name_len | name (UTF-8) | nx*ny*nz f32, x-fastest
//! optional: u8 flag | per grid: f32 min, f32 max      (flag = 1)
//! ```
//!
//! All integers and reals are little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dims, Grid, GridRange, MultiGridVolume, NormalizationParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VOLZ";
pub const VERSION: u32 = 1;

pub fn write_volz<W: Write>(
    mut w: W,
    volume: &MultiGridVolume,
    normalization: Option<&NormalizationParams>,
) -> Result<()> {
    if let Some(p) = normalization {
        if p.ranges.len() != volume.grid_count() {
            return Err(Error::Shape(format!(
                "normalization block has {} grids, volume has {}",
                p.ranges.len(),
                volume.grid_count()
            )));
        }
    }
    let dims = volume.dims();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [dims.nx, dims.ny, dims.nz, volume.grid_count()] {
        w.write_all(&to_u32(v, "dimension")?.to_le_bytes())?;
    }
    for grid in volume.grids() {
        let name = grid.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::format("VOLZ", format!("grid name {:?} too long", grid.name)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        let mut buf = Vec::with_capacity(grid.values.len() * 4);
        for v in &grid.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    if let Some(p) = normalization {
        w.write_all(&[1])?;
        for r in &p.ranges {
            w.write_all(&r.min.to_le_bytes())?;
            w.write_all(&r.max.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_volz<R: Read>(mut r: R) -> Result<(MultiGridVolume, Option<NormalizationParams>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::format("VOLZ", format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::format("VOLZ", format!("unsupported version {version}")));
    }
    let nx = read_u32(&mut r)? as usize;
    let ny = read_u32(&mut r)? as usize;
    let nz = read_u32(&mut r)? as usize;
    let grid_count = read_u32(&mut r)? as usize;
    let dims = Dims::new(nx, ny, nz);
    if dims.is_empty() {
        return Err(Error::format("VOLZ", format!("empty dims {dims}")));
    }

    let mut grids = Vec::with_capacity(grid_count);
    let mut raw = vec![0u8; dims.len() * 4];
    for _ in 0..grid_count {
        let mut len = [0u8; 2];
        r.read_exact(&mut len).map_err(truncated)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format("VOLZ", "grid name is not UTF-8"))?;
        r.read_exact(&mut raw).map_err(truncated)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        grids.push(Grid { name, values });
    }
    let volume = MultiGridVolume::new(dims, grids)?;

    let mut flag = [0u8; 1];
    let normalization = match r.read(&mut flag)? {
        0 => None,
        _ if flag[0] == 0 => None,
        _ if flag[0] == 1 => {
            let mut ranges = Vec::with_capacity(grid_count);
            for _ in 0..grid_count {
                let min = read_f32(&mut r)?;
                let max = read_f32(&mut r)?;
                if min.is_nan() || max.is_nan() || max < min {
                    return Err(Error::format("VOLZ", format!("range max {max} < min {min}")));
                }
                ranges.push(GridRange { min, max });
            }
            Some(NormalizationParams { ranges })
        }
        _ => {
            return Err(Error::format(
                "VOLZ",
                format!("unknown normalization flag {}", flag[0]),
            ))
        }
    };
    Ok((volume, normalization))
}

pub fn save_volz(
    path: impl AsRef<Path>,
    volume: &MultiGridVolume,
    normalization: Option<&NormalizationParams>,
) -> Result<()> {
    write_volz(BufWriter::new(File::create(path)?), volume, normalization)
}

pub fn load_volz(path: impl AsRef<Path>) -> Result<(MultiGridVolume, Option<NormalizationParams>)> {
    read_volz(BufReader::new(File::open(path)?))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format("VOLZ", format!("{what} {v} exceeds u32")))
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::format("VOLZ", "unexpected end of data")
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f32::from_le_bytes(b))
}
