//! Flattened (coordinate, target) rows drawn from a volume under a mask.

use crate::error::Result;
use crate::mask::VoxelMask;
use crate::volume::{Dims, MultiGridVolume};

/// How voxel indices map to network input coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CoordConvention {
    /// `c = index / (dim - 1)` per axis, `0` on axes of length one.
    UnitCube = 0,
}

impl CoordConvention {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(CoordConvention::UnitCube),
            _ => None,
        }
    }
}

#[inline]
fn axis_coordinate(i: usize, len: usize) -> f32 {
    if len <= 1 {
        0.0
    } else {
        (i as f64 / (len - 1) as f64) as f32
    }
}

/// Network input for voxel `(x, y, z)` under [`CoordConvention::UnitCube`].
#[inline]
pub fn unit_coordinate(dims: Dims, x: usize, y: usize, z: usize) -> [f32; 3] {
    [
        axis_coordinate(x, dims.nx),
        axis_coordinate(y, dims.ny),
        axis_coordinate(z, dims.nz),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateDataset {
    pub coords: Vec<[f32; 3]>,
    /// Row-major `rows x grid_count`.
    pub targets: Vec<f32>,
    /// Linear voxel index each row was taken from.
    pub voxels: Vec<usize>,
    pub grid_count: usize,
    pub dims: Dims,
}

impl CoordinateDataset {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn target(&self, row: usize) -> &[f32] {
        &self.targets[row * self.grid_count..(row + 1) * self.grid_count]
    }

    /// Builds a dataset directly from rows; used for toy problems.
    pub fn from_rows(coords: Vec<[f32; 3]>, targets: Vec<f32>, grid_count: usize) -> Self {
        assert_eq!(coords.len() * grid_count, targets.len());
        let n = coords.len();
        CoordinateDataset {
            coords,
            targets,
            voxels: (0..n).collect(),
            grid_count,
            dims: Dims::new(n, 1, 1),
        }
    }
}

/// One row per set mask bit, in ascending linear index order.
pub fn extract_dataset(volume: &MultiGridVolume, mask: &VoxelMask) -> Result<CoordinateDataset> {
    let dims = volume.dims();
    dims.check_eq(&mask.dims())?;
    let grid_count = volume.grid_count();
    let rows = mask.count_ones();
    let mut coords = Vec::with_capacity(rows);
    let mut targets = Vec::with_capacity(rows * grid_count);
    let mut voxels = Vec::with_capacity(rows);
    for idx in mask.iter_ones() {
        let (x, y, z) = dims.coords(idx);
        coords.push(unit_coordinate(dims, x, y, z));
        targets.extend(volume.grids().iter().map(|g| g.values[idx]));
        voxels.push(idx);
    }
    Ok(CoordinateDataset {
        coords,
        targets,
        voxels,
        grid_count,
        dims,
    })
}
