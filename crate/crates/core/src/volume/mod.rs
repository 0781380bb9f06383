//! Dense multi-grid volumes and per-grid min-max normalization.

mod synth;
pub mod volz;

pub use synth::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};

/// Extent of a dense voxel grid. Linear indices are x-fastest:
/// `idx = x + nx * (y + ny * z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub const fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let rest = idx / self.nx;
        (x, rest % self.ny, rest / self.ny)
    }

    pub const fn as_tuple(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn check_eq(&self, other: &Dims) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DimsMismatch {
                expected: self.as_tuple(),
                actual: other.as_tuple(),
            })
        }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub name: String,
    pub values: Vec<f32>,
}

/// A dense volume holding one or more named scalar grids over the same box.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiGridVolume {
    dims: Dims,
    grids: Vec<Grid>,
}

impl MultiGridVolume {
    pub fn new(dims: Dims, grids: Vec<Grid>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidConfig(format!("volume dims {dims} are empty")));
        }
        for (i, grid) in grids.iter().enumerate() {
            if grid.values.len() != dims.len() {
                return Err(Error::Shape(format!(
                    "grid {:?} has {} values, dims {} need {}",
                    grid.name,
                    grid.values.len(),
                    dims,
                    dims.len()
                )));
            }
            if grids[..i].iter().any(|g| g.name == grid.name) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate grid name {:?}",
                    grid.name
                )));
            }
        }
        Ok(MultiGridVolume { dims, grids })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn grids(&self) -> &[Grid] {
        &self.grids
    }

    pub fn grid_count(&self) -> usize {
        self.grids.len()
    }

    pub fn grid(&self, name: &str) -> Option<&Grid> {
        self.grids.iter().find(|g| g.name == name)
    }

    /// Total number of stored scalar values (voxels times grids).
    pub fn value_count(&self) -> usize {
        self.dims.len() * self.grids.len()
    }

    pub fn into_grids(self) -> Vec<Grid> {
        self.grids
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRange {
    pub min: f32,
    pub max: f32,
}

/// Raw value range of every grid, recorded by [`normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationParams {
    pub ranges: Vec<GridRange>,
}

impl NormalizationParams {
    pub fn identity(grid_count: usize) -> Self {
        NormalizationParams {
            ranges: vec![GridRange { min: 0.0, max: 1.0 }; grid_count],
        }
    }
}

fn normalize_value(v: f32, r: GridRange) -> f32 {
    let range = r.max as f64 - r.min as f64;
    if range <= 0.0 {
        return 0.0;
    }
    (((v as f64 - r.min as f64) / range) as f32).clamp(0.0, 1.0)
}

fn denormalize_value(v: f32, r: GridRange) -> f32 {
    let range = r.max as f64 - r.min as f64;
    if range <= 0.0 {
        return r.min;
    }
    (v as f64 * range + r.min as f64) as f32
}

/// Maps every grid onto `[0, 1]` with `v -> (v - min) / (max - min)`.
///
/// A constant grid normalizes to all zeros and its range is kept so that
/// [`denormalize`] restores the constant.
pub fn normalize(volume: &MultiGridVolume) -> (MultiGridVolume, NormalizationParams) {
    let mut ranges = Vec::with_capacity(volume.grid_count());
    let grids = volume
        .grids
        .iter()
        .map(|grid| {
            let (min, max) = grid
                .values
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let range = GridRange { min, max };
            ranges.push(range);
            Grid {
                name: grid.name.clone(),
                values: grid.values.iter().map(|&v| normalize_value(v, range)).collect(),
            }
        })
        .collect();
    (
        MultiGridVolume {
            dims: volume.dims,
            grids,
        },
        NormalizationParams { ranges },
    )
}

pub fn denormalize(volume: &MultiGridVolume, params: &NormalizationParams) -> Result<MultiGridVolume> {
    if params.ranges.len() != volume.grid_count() {
        return Err(Error::Shape(format!(
            "normalization params cover {} grids, volume has {}",
            params.ranges.len(),
            volume.grid_count()
        )));
    }
    let grids = volume
        .grids
        .iter()
        .zip(&params.ranges)
        .map(|(grid, &range)| Grid {
            name: grid.name.clone(),
            values: grid
                .values
                .iter()
                .map(|&v| denormalize_value(v, range))
                .collect(),
        })
        .collect();
    Ok(MultiGridVolume {
        dims: volume.dims,
        grids,
    })
}
