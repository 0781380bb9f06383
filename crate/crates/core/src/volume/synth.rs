//! Seeded plume-like test volumes: a sparse fire with a density and a
//! temperature grid over an exactly-zero background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dims, Grid, MultiGridVolume};
use crate::error::{Error, Result};

pub const MIN_SYNTHETIC_AXIS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dims: Dims,
    /// Zero every grid where `x < nx/2 && y < ny/2`.
    pub carve_quadrant: bool,
    pub plume_blobs: usize,
    pub detail_blobs: usize,
    /// Relative amplitude of the multiplicative small-scale turbulence.
    pub turbulence: f64,
    pub turbulence_modes: usize,
    /// Wavelength range of the turbulence modes, in voxels.
    pub turbulence_wavelength: [f64; 2],
    /// Bounds on the fraction of voxels with a positive value.
    pub min_active_fraction: f64,
    pub max_active_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dims: Dims::new(64, 64, 64),
            carve_quadrant: false,
            plume_blobs: 48,
            detail_blobs: 96,
            turbulence: 0.6,
            turbulence_modes: 64,
            turbulence_wavelength: [2.5, 8.0],
            min_active_fraction: 0.05,
            max_active_fraction: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn with_dims(dims: Dims) -> Self {
        SyntheticSpec {
            dims,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.nx < MIN_SYNTHETIC_AXIS || d.ny < MIN_SYNTHETIC_AXIS || d.nz < MIN_SYNTHETIC_AXIS {
            return Err(Error::InvalidConfig(format!(
                "synthetic volume needs at least {MIN_SYNTHETIC_AXIS} voxels per axis, got {d}"
            )));
        }
        if self.plume_blobs == 0 {
            return Err(Error::InvalidConfig("plume needs at least one blob".into()));
        }
        let (lo, hi) = (self.min_active_fraction, self.max_active_fraction);
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "active fraction bounds [{lo}, {hi}] must satisfy 0 < min <= max < 1"
            )));
        }
        if !(self.turbulence >= 0.0 && self.turbulence.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "turbulence amplitude {} must be finite and non-negative",
                self.turbulence
            )));
        }
        let [wl, wh] = self.turbulence_wavelength;
        if !(wl > 0.0 && wl <= wh && wh.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "turbulence wavelengths [{wl}, {wh}] must satisfy 0 < min <= max"
            )));
        }
        Ok(())
    }
}

struct Blob {
    center: [f64; 3],
    sigma: f64,
    density: f64,
    heat: f64,
}

/// Background cutoff applied to the raw density field before the active
/// fraction bounds are enforced.
const BACKGROUND_EPSILON: f64 = 0.02;
const TEMPERATURE_SCALE: f64 = 1200.0;

fn is_carved(spec: &SyntheticSpec, x: usize, y: usize) -> bool {
    spec.carve_quadrant && 2 * x < spec.dims.nx && 2 * y < spec.dims.ny
}

/// Builds the volume as a sum of Gaussian blobs strung along a wavering
/// vertical axis. The plume widens and cools with height; everything below
/// a density threshold is set to exactly zero in both grids.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<MultiGridVolume> {
    spec.validate()?;
    let dims = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (fx, fy, fz) = (dims.nx as f64, dims.ny as f64, dims.nz as f64);
    let lateral = fx.min(fy);
    let sway = 0.06 * lateral;
    let phase_x = rng.random_range(0.0..std::f64::consts::TAU);
    let phase_y = rng.random_range(0.0..std::f64::consts::TAU);
    let turns = rng.random_range(0.75..1.5);
    let axis = |z: f64| -> [f64; 2] {
        let t = std::f64::consts::TAU * turns * z / fz;
        [
            0.5 * (fx - 1.0) + sway * (t + phase_x).sin(),
            0.5 * (fy - 1.0) + sway * (t + phase_y).cos(),
        ]
    };

    let mut blobs = Vec::with_capacity(spec.plume_blobs + spec.detail_blobs);
    for i in 0..spec.plume_blobs + spec.detail_blobs {
        let detail = i >= spec.plume_blobs;
        // base of the fire sits a little above the floor
        let h: f64 = rng.random_range(0.05..0.9);
        let z = h * fz;
        let [ax, ay] = axis(z);
        let spread = 0.10 * lateral * (0.6 + 1.2 * h);
        let (sigma, jitter, density) = if detail {
            (
                rng.random_range(0.025..0.06) * lateral,
                spread,
                rng.random_range(0.2..0.6),
            )
        } else {
            (
                spread * rng.random_range(0.8..1.2),
                0.3 * spread,
                rng.random_range(0.6..1.0),
            )
        };
        let center = [
            ax + rng.random_range(-jitter..=jitter),
            ay + rng.random_range(-jitter..=jitter),
            z,
        ];
        blobs.push(Blob {
            center,
            sigma,
            density,
            heat: density * (1.0 - 0.8 * h),
        });
    }

    let n = dims.len();
    let mut density = vec![0.0f64; n];
    let mut heat = vec![0.0f64; n];
    for blob in &blobs {
        splat(dims, blob, &mut density, &mut heat);
    }
    if spec.turbulence > 0.0 && spec.turbulence_modes > 0 {
        let modes = turbulence_modes(spec.turbulence_modes, spec.turbulence_wavelength, &mut rng);
        apply_turbulence(dims, &modes, spec.turbulence, &mut density, &mut heat);
    }

    let threshold = density_threshold(spec, &density);
    let mut density_out = vec![0.0f32; n];
    let mut temperature_out = vec![0.0f32; n];
    for idx in 0..n {
        let (x, y, _) = dims.coords(idx);
        if is_carved(spec, x, y) || density[idx] <= threshold {
            continue;
        }
        density_out[idx] = (density[idx] - threshold) as f32;
        // strictly positive inside the plume so both grids agree on activity
        temperature_out[idx] = (TEMPERATURE_SCALE * (heat[idx] + 1e-3)) as f32;
    }

    MultiGridVolume::new(
        dims,
        vec![
            Grid {
                name: "density".into(),
                values: density_out,
            },
            Grid {
                name: "temperature".into(),
                values: temperature_out,
            },
        ],
    )
}

fn splat(dims: Dims, blob: &Blob, density: &mut [f64], heat: &mut [f64]) {
    let reach = 3.5 * blob.sigma;
    let span = |c: f64, len: usize| -> (usize, usize) {
        let lo = (c - reach).floor().max(0.0) as usize;
        let hi = ((c + reach).ceil().max(-1.0) as i64 + 1).clamp(0, len as i64) as usize;
        (lo.min(len), hi)
    };
    let (x0, x1) = span(blob.center[0], dims.nx);
    let (y0, y1) = span(blob.center[1], dims.ny);
    let (z0, z1) = span(blob.center[2], dims.nz);
    let inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
    let heat_inv = 1.0 / (2.0 * 0.7 * 0.7 * blob.sigma * blob.sigma);
    for z in z0..z1 {
        let dz = z as f64 - blob.center[2];
        for y in y0..y1 {
            let dy = y as f64 - blob.center[1];
            for x in x0..x1 {
                let dx = x as f64 - blob.center[0];
                let r2 = dx * dx + dy * dy + dz * dz;
                let idx = dims.index(x, y, z);
                density[idx] += blob.density * (-r2 * inv).exp();
                heat[idx] += blob.heat * (-r2 * heat_inv).exp();
            }
        }
    }
}

/// A plane wave `sin(k·x + phase)` in voxel units.
struct Mode {
    wave: [f64; 3],
    phase: f64,
}

/// Random directions with wavelengths drawn uniformly from `wavelength`.
fn turbulence_modes(count: usize, wavelength: [f64; 2], rng: &mut ChaCha8Rng) -> Vec<Mode> {
    (0..count)
        .map(|_| {
            let dir: [f64; 3] = loop {
                let v = [
                    rng.random_range(-1.0..1.0f64),
                    rng.random_range(-1.0..1.0f64),
                    rng.random_range(-1.0..1.0f64),
                ];
                let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                if n2 > 1e-3 && n2 <= 1.0 {
                    let n = n2.sqrt();
                    break [v[0] / n, v[1] / n, v[2] / n];
                }
            };
            let k = std::f64::consts::TAU / rng.random_range(wavelength[0]..=wavelength[1]);
            Mode {
                wave: [k * dir[0], k * dir[1], k * dir[2]],
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect()
}

/// Scales both fields by `max(0, 1 + amplitude * noise)`, where `noise` is
/// the unit-variance sum of the modes.
fn apply_turbulence(dims: Dims, modes: &[Mode], amplitude: f64, density: &mut [f64], heat: &mut [f64]) {
    let norm = (2.0 / modes.len() as f64).sqrt();
    for idx in 0..dims.len() {
        if density[idx] == 0.0 && heat[idx] == 0.0 {
            continue;
        }
        let (x, y, z) = dims.coords(idx);
        let p = [x as f64, y as f64, z as f64];
        let noise: f64 = modes
            .iter()
            .map(|m| (m.wave[0] * p[0] + m.wave[1] * p[1] + m.wave[2] * p[2] + m.phase).sin())
            .sum();
        let f = (1.0 + amplitude * norm * noise).max(0.0);
        density[idx] *= f;
        heat[idx] *= f;
    }
}

/// Picks the cutoff so the active voxel count lands inside the spec bounds.
fn density_threshold(spec: &SyntheticSpec, density: &[f64]) -> f64 {
    let dims = spec.dims;
    let n = dims.len() as f64;
    let min_count = (spec.min_active_fraction * n).ceil() as usize;
    let max_count = (spec.max_active_fraction * n).floor() as usize;

    let mut candidates: Vec<f64> = density
        .iter()
        .enumerate()
        .filter(|&(idx, _)| {
            let (x, y, _) = dims.coords(idx);
            !is_carved(spec, x, y)
        })
        .map(|(_, &v)| v)
        .collect();
    let active = candidates.iter().filter(|&&v| v > BACKGROUND_EPSILON).count();
    if (min_count..=max_count).contains(&active) {
        return BACKGROUND_EPSILON;
    }
    candidates.sort_by(|a, b| b.total_cmp(a));
    if active > max_count {
        candidates[max_count]
    } else if min_count < candidates.len() {
        0.5 * (candidates[min_count - 1] + candidates[min_count])
    } else {
        0.0
    }
}
