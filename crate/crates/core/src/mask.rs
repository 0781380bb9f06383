//! Voxel occupancy masks: the full bounding box, the active-voxel mask and
//! its dilations by the 3x3x3 cube.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::volume::{Dims, MultiGridVolume};

pub const VMSK_MAGIC: &[u8; 4] = b"VMSK";

/// One bit per voxel, in the volume's x-fastest linear order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelMask {
    dims: Dims,
    words: Vec<u64>,
}

impl VoxelMask {
    pub fn empty(dims: Dims) -> Self {
        VoxelMask {
            dims,
            words: vec![0; dims.len().div_ceil(64)],
        }
    }

    /// Every voxel of the bounding box.
    pub fn full(dims: Dims) -> Self {
        let mut mask = Self::empty(dims);
        mask.words.fill(u64::MAX);
        mask.clear_padding();
        mask
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut mask = Self::empty(dims);
        for idx in 0..dims.len() {
            if f(idx) {
                mask.set(idx, true);
            }
        }
        mask
    }

    fn from_bytes(dims: Dims, bytes: &[u8]) -> Self {
        let mut mask = Self::empty(dims);
        for (word, chunk) in mask.words.iter_mut().zip(bytes.chunks(64)) {
            *word = chunk
                .iter()
                .enumerate()
                .fold(0u64, |acc, (bit, &b)| acc | (((b != 0) as u64) << bit));
        }
        mask
    }

    fn clear_padding(&mut self) {
        let tail = self.dims.len() % 64;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        (self.words[idx / 64] >> (idx % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, idx: usize, on: bool) {
        assert!(idx < self.len(), "voxel {idx} outside mask of {}", self.dims);
        let bit = 1u64 << (idx % 64);
        if on {
            self.words[idx / 64] |= bit;
        } else {
            self.words[idx / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_full(&self) -> bool {
        self.count_ones() == self.len()
    }

    /// True when every voxel set here is also set in `other`.
    pub fn is_subset_of(&self, other: &VoxelMask) -> bool {
        self.dims == other.dims
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }

    /// Linear indices of the set voxels, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(w * 64 + tz)
            })
        })
    }

    fn to_bytes(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.get(i) as u8).collect()
    }

    /// Debug export: 16-byte header (`"VMSK"`, u32 nx, ny, nz) followed by the
    /// bits packed LSB-first in linear voxel order.
    pub fn write_vmsk<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(VMSK_MAGIC)?;
        for v in [self.dims.nx, self.dims.ny, self.dims.nz] {
            let v = u32::try_from(v).map_err(|_| Error::format("VMSK", "dimension exceeds u32"))?;
            w.write_all(&v.to_le_bytes())?;
        }
        let byte_len = self.len().div_ceil(8);
        let packed: Vec<u8> = self
            .words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(byte_len)
            .collect();
        w.write_all(&packed)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_vmsk<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|_| Error::format("VMSK", "truncated header"))?;
        if &header[..4] != VMSK_MAGIC {
            return Err(Error::format("VMSK", "bad magic"));
        }
        let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let dims = Dims::new(field(4), field(8), field(12));
        let mut packed = vec![0u8; dims.len().div_ceil(8)];
        r.read_exact(&mut packed)
            .map_err(|_| Error::format("VMSK", "truncated bitset"))?;
        let mut mask = Self::empty(dims);
        for (word, chunk) in mask.words.iter_mut().zip(packed.chunks(8)) {
            let mut b = [0u8; 8];
            b[..chunk.len()].copy_from_slice(chunk);
            *word = u64::from_le_bytes(b);
        }
        mask.clear_padding();
        Ok(mask)
    }
}

/// Active-voxel mask: a voxel is set iff some grid holds a value strictly
/// greater than zero there. Expects normalized data.
pub fn compute_avm(volume: &MultiGridVolume) -> VoxelMask {
    VoxelMask::from_fn(volume.dims(), |idx| {
        volume.grids().iter().any(|g| g.values[idx] > 0.0)
    })
}

/// Applies `steps` rounds of the 3x3x3 neighbourhood union. Neighbours
/// outside the bounding box contribute nothing.
///
/// The cube is separable, so each round is three 1-D passes (x, y, z).
pub fn dilate(mask: &VoxelMask, steps: usize) -> VoxelMask {
    if steps == 0 || mask.count_ones() == 0 {
        return mask.clone();
    }
    let dims = mask.dims;
    let mut cur = mask.to_bytes();
    let mut next = vec![0u8; cur.len()];
    let strides = [1, dims.nx, dims.nx * dims.ny];
    let extents = [dims.nx, dims.ny, dims.nz];
    for _ in 0..steps {
        for axis in 0..3 {
            dilate_axis(&cur, &mut next, strides[axis], extents[axis]);
            std::mem::swap(&mut cur, &mut next);
        }
        if cur.iter().all(|&b| b != 0) {
            break;
        }
    }
    VoxelMask::from_bytes(dims, &cur)
}

/// One-voxel dilation along a single axis with the given stride and extent.
fn dilate_axis(src: &[u8], dst: &mut [u8], stride: usize, extent: usize) {
    let block = stride * extent;
    for (s, d) in src.chunks_exact(block).zip(dst.chunks_exact_mut(block)) {
        for i in 0..extent {
            let row = i * stride;
            let lo = if i > 0 { row - stride } else { row };
            let hi = if i + 1 < extent { row + stride } else { row };
            for o in 0..stride {
                d[row + o] = s[row + o] | s[lo + o] | s[hi + o];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn cube3() -> Dims {
        Dims::new(3, 3, 3)
    }

    #[test]
    fn avm_is_existential_over_grids() {
        let v = MultiGridVolume::new(
            Dims::new(1, 1, 1),
            vec![
                Grid {
                    name: "a".into(),
                    values: vec![0.0],
                },
                Grid {
                    name: "b".into(),
                    values: vec![0.5],
                },
            ],
        )
        .unwrap();
        assert_eq!(compute_avm(&v).count_ones(), 1);
    }

    #[test]
    fn avm_of_zero_volume_is_empty() {
        let v = MultiGridVolume::new(
            cube3(),
            vec![Grid {
                name: "a".into(),
                values: vec![0.0; 27],
            }],
        )
        .unwrap();
        assert_eq!(compute_avm(&v).count_ones(), 0);
    }

    #[test]
    fn avm_single_voxel() {
        let d = cube3();
        let mut values = vec![0.0; 27];
        values[d.index(1, 1, 1)] = 0.25;
        let v = MultiGridVolume::new(
            d,
            vec![Grid {
                name: "a".into(),
                values,
            }],
        )
        .unwrap();
        let m = compute_avm(&v);
        assert_eq!(m.count_ones(), 1);
        assert!(m.get(d.index(1, 1, 1)));
    }

    #[test]
    fn dilate_zero_steps_is_identity() {
        let m = VoxelMask::from_fn(Dims::new(5, 4, 3), |i| i % 7 == 0);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn dilate_center_fills_cube() {
        let d = cube3();
        let m = VoxelMask::from_fn(d, |i| i == d.index(1, 1, 1));
        assert!(dilate(&m, 1).is_full());
    }

    #[test]
    fn dilate_corner_is_clipped() {
        let d = cube3();
        let m = VoxelMask::from_fn(d, |i| i == 0);
        let out = dilate(&m, 1);
        assert_eq!(out.count_ones(), 8);
        for idx in out.iter_ones() {
            let (x, y, z) = d.coords(idx);
            assert!(x <= 1 && y <= 1 && z <= 1);
        }
    }

    #[test]
    fn dilate_empty_stays_empty() {
        let m = VoxelMask::empty(Dims::new(4, 4, 4));
        assert_eq!(dilate(&m, 3).count_ones(), 0);
    }

    #[test]
    fn full_mask_popcount_and_padding() {
        let d = Dims::new(5, 3, 7);
        let m = VoxelMask::full(d);
        assert_eq!(m.count_ones(), d.len());
        assert_eq!(m.iter_ones().count(), d.len());
        assert!(m.iter_ones().eq(0..d.len()));
    }

    #[test]
    fn vmsk_layout_and_roundtrip() {
        let d = Dims::new(3, 2, 2);
        let m = VoxelMask::from_fn(d, |i| i == 0 || i == 9 || i == 11);
        let mut buf = Vec::new();
        m.write_vmsk(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 2);
        assert_eq!(&buf[..4], b"VMSK");
        assert_eq!(&buf[4..16], &[3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(buf[16], 0b0000_0001);
        assert_eq!(buf[17], 0b0000_1010);
        assert_eq!(VoxelMask::read_vmsk(&buf[..]).unwrap(), m);
    }
}
