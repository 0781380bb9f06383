//! End-to-end steps shared by the command line and the acceptance suite:
//! mask variants, the variant sweep, region statistics and slice export.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use crate::checkpoint::{Checkpoint, LossDigest};
use crate::dataset::{extract_dataset, CoordinateDataset};
use crate::error::{Error, Result};
use crate::mask::{compute_avm, dilate, VoxelMask};
use crate::metrics::{evaluate, QualityReport};
use crate::net::{FfNetwork, Real};
use crate::train::{reconstruct_full, train_network, EpochStats, TrainConfig, TrainReport};
use crate::volume::{normalize, Dims, MultiGridVolume, NormalizationParams};

/// Which voxels a network is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskVariant {
    /// Active voxels only.
    Avm,
    /// Active voxels dilated by the given number of 3x3x3 steps.
    Dilated(usize),
    /// The whole bounding box.
    Bbx,
}

impl MaskVariant {
    pub fn build(&self, normalized: &MultiGridVolume) -> VoxelMask {
        match *self {
            MaskVariant::Avm => compute_avm(normalized),
            MaskVariant::Dilated(steps) => dilate(&compute_avm(normalized), steps),
            MaskVariant::Bbx => VoxelMask::full(normalized.dims()),
        }
    }

    /// Same as [`build`](Self::build) but reuses a precomputed active mask.
    pub fn build_from_avm(&self, avm: &VoxelMask) -> VoxelMask {
        match *self {
            MaskVariant::Avm => avm.clone(),
            MaskVariant::Dilated(steps) => dilate(avm, steps),
            MaskVariant::Bbx => VoxelMask::full(avm.dims()),
        }
    }
}

impl fmt::Display for MaskVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskVariant::Avm => f.write_str("avm"),
            MaskVariant::Dilated(l) => write!(f, "dilated:{l}"),
            MaskVariant::Bbx => f.write_str("bbx"),
        }
    }
}

impl FromStr for MaskVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "avm" => Ok(MaskVariant::Avm),
            "bbx" => Ok(MaskVariant::Bbx),
            _ => {
                let steps = s
                    .strip_prefix("dilated:")
                    .and_then(|l| l.parse::<usize>().ok())
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "unknown mask mode {s:?}; expected avm, bbx or dilated:<l>"
                        ))
                    })?;
                if steps == 0 {
                    return Err(Error::InvalidConfig(
                        "dilation must be at least 1; use avm for no dilation".into(),
                    ));
                }
                Ok(MaskVariant::Dilated(steps))
            }
        }
    }
}

/// A normalized volume together with one training set drawn from it.
pub struct PreparedData {
    pub normalized: MultiGridVolume,
    pub params: NormalizationParams,
    pub mask: VoxelMask,
    pub dataset: CoordinateDataset,
}

pub fn prepare(raw: &MultiGridVolume, variant: MaskVariant) -> Result<PreparedData> {
    let (normalized, params) = normalize(raw);
    let mask = variant.build(&normalized);
    let dataset = extract_dataset(&normalized, &mask)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(PreparedData {
        normalized,
        params,
        mask,
        dataset,
    })
}

pub fn grid_names(volume: &MultiGridVolume) -> Vec<String> {
    volume.grids().iter().map(|g| g.name.clone()).collect()
}

/// Trains on `data` and packages the result as a checkpoint.
pub fn train_checkpoint<T: Real>(
    data: &PreparedData,
    config: &TrainConfig,
    label: &str,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Checkpoint, TrainReport<T>)> {
    config.validate()?;
    let net = FfNetwork::<T>::init(&config.shape(data.dataset.grid_count), config.seed)?;
    let mut report = train_network(net, &data.dataset, config, label, on_epoch)?;
    report.network.normalization = Some(data.params.clone());
    let checkpoint = Checkpoint {
        config: config.clone(),
        dims: data.normalized.dims(),
        grid_names: grid_names(&data.normalized),
        network: report.network.cast(),
        losses: LossDigest::of(&report.losses()),
    };
    Ok((checkpoint, report))
}

/// Half-open voxel box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub x: Range<usize>,
    pub y: Range<usize>,
    pub z: Range<usize>,
}

impl Region {
    /// Voxels with `x < nx/2` and `y < ny/2`, all z.
    pub fn lower_quadrant(dims: Dims) -> Self {
        Region {
            x: 0..dims.nx.div_ceil(2),
            y: 0..dims.ny.div_ceil(2),
            z: 0..dims.nz,
        }
    }

    /// Parses `quadrant` or `x0:x1,y0:y1,z0:z1`.
    pub fn parse(s: &str, dims: Dims) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("quadrant") {
            return Ok(Self::lower_quadrant(dims));
        }
        let bad = || Error::InvalidConfig(format!("bad region {s:?}; expected x0:x1,y0:y1,z0:z1 or quadrant"));
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut ranges = Vec::with_capacity(3);
        for (part, len) in parts.iter().zip([dims.nx, dims.ny, dims.nz]) {
            let (a, b) = part.split_once(':').ok_or_else(bad)?;
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a >= b || b > len {
                return Err(Error::OutOfRange(format!(
                    "region {a}:{b} outside axis of length {len}"
                )));
            }
            ranges.push(a..b);
        }
        let z = ranges.pop().unwrap();
        let y = ranges.pop().unwrap();
        let x = ranges.pop().unwrap();
        Ok(Region { x, y, z })
    }

    pub fn voxel_indices(&self, dims: Dims) -> impl Iterator<Item = usize> + '_ {
        self.z.clone().flat_map(move |z| {
            self.y
                .clone()
                .flat_map(move |y| self.x.clone().map(move |x| dims.index(x, y, z)))
        })
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{},{}:{},{}:{}",
            self.x.start, self.x.end, self.y.start, self.y.end, self.z.start, self.z.end
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRegionStats {
    pub grid: String,
    pub mean_reference: f64,
    pub mean_predicted: f64,
    pub rmse: f64,
}

/// Mean values and RMSE of every grid restricted to `region`.
pub fn region_stats(
    reference: &MultiGridVolume,
    predicted: &MultiGridVolume,
    region: &Region,
) -> Result<Vec<GridRegionStats>> {
    let dims = reference.dims();
    dims.check_eq(&predicted.dims())?;
    let count = region.x.len() * region.y.len() * region.z.len();
    if count == 0 {
        return Err(Error::OutOfRange("empty region".into()));
    }
    Ok(reference
        .grids()
        .iter()
        .zip(predicted.grids())
        .map(|(r, p)| {
            let (mut sr, mut sp, mut se) = (0.0f64, 0.0f64, 0.0f64);
            for idx in region.voxel_indices(dims) {
                let (a, b) = (r.values[idx] as f64, p.values[idx] as f64);
                sr += a;
                sp += b;
                se += (a - b) * (a - b);
            }
            let n = count as f64;
            GridRegionStats {
                grid: r.name.clone(),
                mean_reference: sr / n,
                mean_predicted: sp / n,
                rmse: (se / n).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variants: Vec<MaskVariant>,
    pub config: TrainConfig,
    /// Count the encoder's parameters in the compression ratio.
    pub include_encoder: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one variant".into()));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if let MaskVariant::Dilated(0) = v {
                return Err(Error::InvalidConfig("dilated variants need l >= 1".into()));
            }
            if self.variants[..i].contains(v) {
                return Err(Error::InvalidConfig(format!("variant {v} listed twice")));
            }
        }
        self.config.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub variant: MaskVariant,
    pub rows: usize,
    pub seconds_per_epoch: f64,
    pub losses: Vec<f64>,
    pub quality: QualityReport,
    /// Statistics over the `x < nx/2, y < ny/2` quadrant.
    pub quadrant: Vec<GridRegionStats>,
}

/// Trains every variant from the same initial network and scores each
/// reconstruction over the full bounding box. The volume is normalized once
/// and shared by all rows.
pub fn run_sweep(
    raw: &MultiGridVolume,
    spec: &SweepSpec,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let (normalized, params) = normalize(raw);
    let avm = compute_avm(&normalized);
    let names = grid_names(&normalized);
    let dims = normalized.dims();
    let initial = FfNetwork::<f32>::init(&spec.config.shape(normalized.grid_count()), spec.config.seed)?;

    let mut rows = Vec::with_capacity(spec.variants.len());
    for &variant in &spec.variants {
        let mask = variant.build_from_avm(&avm);
        let dataset = extract_dataset(&normalized, &mask)?;
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let label = variant.to_string();
        let mut report = train_network(initial.clone(), &dataset, &spec.config, &label, |_| {})?;
        report.network.normalization = Some(params.clone());
        let predicted = reconstruct_full(&report.network, dims, &names)?;
        let quality = evaluate(
            &normalized,
            &predicted,
            &report.network,
            spec.include_encoder,
            report.seconds,
            &label,
        )?;
        let quadrant = region_stats(&normalized, &predicted, &Region::lower_quadrant(dims))?;
        let row = SweepRow {
            variant,
            rows: dataset.len(),
            seconds_per_epoch: report.seconds_per_epoch(),
            losses: report.losses(),
            quality,
            quadrant,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(
        w,
        "variant,rows,psnr_db,nrmse,ssim,score,time_s,seconds_per_epoch,compression,final_loss"
    )?;
    for r in rows {
        let q = &r.quality;
        writeln!(
            w,
            "{},{},{:.4},{:.6},{:.6},{:.6},{:.3},{:.4},{:.4},{:.6e}",
            r.variant,
            r.rows,
            q.psnr_db,
            q.nrmse,
            q.ssim,
            q.score,
            q.seconds,
            r.seconds_per_epoch,
            q.compression,
            r.losses.last().copied().unwrap_or(f64::NAN)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates the network on one Z-slice only; values clamped to `[0, 1]`.
pub fn reconstruct_slice<T: Real>(net: &FfNetwork<T>, dims: Dims, z: usize, grid: usize) -> Result<Vec<f32>> {
    if z >= dims.nz {
        return Err(Error::OutOfRange(format!("slice {z} outside 0..{}", dims.nz)));
    }
    if grid >= net.outputs() {
        return Err(Error::OutOfRange(format!("grid {grid} outside network outputs")));
    }
    let coords: Vec<[T; 3]> = (0..dims.nx * dims.ny)
        .map(|i| {
            let c = crate::dataset::unit_coordinate(dims, i % dims.nx, i / dims.nx, z);
            [T::cast(c[0] as f64), T::cast(c[1] as f64), T::cast(c[2] as f64)]
        })
        .collect();
    let out = net.forward(&coords);
    Ok(out
        .chunks_exact(net.outputs())
        .map(|row| row[grid].as_f64().clamp(0.0, 1.0) as f32)
        .collect())
}

/// Z-slice `z` of the named grid, row-major `ny x nx`.
pub fn volume_slice(volume: &MultiGridVolume, grid: &str, z: usize) -> Result<Vec<f32>> {
    let dims = volume.dims();
    if z >= dims.nz {
        return Err(Error::OutOfRange(format!("slice {z} outside 0..{}", dims.nz)));
    }
    let g = volume
        .grid(grid)
        .ok_or_else(|| Error::UnknownGrid(grid.to_string()))?;
    let plane = dims.nx * dims.ny;
    Ok(g.values[z * plane..(z + 1) * plane].to_vec())
}

/// Maps a normalized value to an 8-bit gray level, rounding half up.
pub fn gray_level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Binary portable graymap (`P5`) of an `nx x ny` slice.
pub fn write_pgm<W: Write>(mut w: W, values: &[f32], nx: usize, ny: usize) -> Result<()> {
    if values.len() != nx * ny {
        return Err(Error::Shape(format!("{} values for a {nx}x{ny} image", values.len())));
    }
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    let pixels: Vec<u8> = values.iter().map(|&v| gray_level(v)).collect();
    w.write_all(&pixels)?;
    w.flush()?;
    Ok(())
}
