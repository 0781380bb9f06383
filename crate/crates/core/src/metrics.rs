//! Reconstruction quality: NRMSE, PSNR, slice-wise SSIM, the combined score
//! and theoretical compression.
//!
//! All inputs are expected in normalized `[0, 1]` units, so the PSNR peak is
//! 1. Reductions accumulate in `f64`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::net::{FfNetwork, Real};
use crate::volume::{Dims, MultiGridVolume};

/// PSNR that maps to a full score contribution.
pub const PSNR_MAX_DB: f64 = 48.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::Shape(format!(
            "metric inputs have {a} and {b} values"
        )));
    }
    Ok(())
}

fn mse<T: Copy + Into<f64>>(reference: &[T], predicted: &[T]) -> f64 {
    let sum: f64 = reference
        .iter()
        .zip(predicted)
        .map(|(&r, &p)| {
            let d = r.into() - p.into();
            d * d
        })
        .sum();
    sum / reference.len() as f64
}

/// Root mean squared error divided by the reference's value range.
pub fn nrmse<T: Copy + Into<f64>>(reference: &[T], predicted: &[T]) -> Result<f64> {
    check_len(reference.len(), predicted.len())?;
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            let v = v.into();
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(mse(reference, predicted).sqrt() / range)
}

/// `-10 log10(MSE)` with peak 1. Identical inputs give `+inf`.
pub fn psnr<T: Copy + Into<f64>>(reference: &[T], predicted: &[T]) -> Result<f64> {
    check_len(reference.len(), predicted.len())?;
    let e = mse(reference, predicted);
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * e.log10()
    })
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

pub fn ssim_constants() -> (f64, f64) {
    (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2)
}

#[inline]
fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let (c1, c2) = ssim_constants();
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM over every fully contained 11x11 window of an `nx x ny` image.
pub fn ssim_slice<T: Copy + Into<f64>>(
    reference: &[T],
    predicted: &[T],
    nx: usize,
    ny: usize,
) -> Result<f64> {
    check_len(reference.len(), predicted.len())?;
    if reference.len() != nx * ny {
        return Err(Error::Shape(format!(
            "slice of {} values is not {nx}x{ny}",
            reference.len()
        )));
    }
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "slice {nx}x{ny} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = gaussian_taps();
    let ox = nx - SSIM_WINDOW + 1;
    let oy = ny - SSIM_WINDOW + 1;

    // horizontal pass over x, y, x², y², xy
    let mut rows = vec![[0.0f64; 5]; ox * ny];
    for y in 0..ny {
        for x in 0..ox {
            let mut acc = [0.0f64; 5];
            for (t, &w) in taps.iter().enumerate() {
                let i = y * nx + x + t;
                let a = reference[i].into();
                let b = predicted[i].into();
                acc[0] += w * a;
                acc[1] += w * b;
                acc[2] += w * a * a;
                acc[3] += w * b * b;
                acc[4] += w * a * b;
            }
            rows[y * ox + x] = acc;
        }
    }

    let mut total = 0.0f64;
    for y in 0..oy {
        for x in 0..ox {
            let mut acc = [0.0f64; 5];
            for (t, &w) in taps.iter().enumerate() {
                let r = &rows[(y + t) * ox + x];
                for c in 0..5 {
                    acc[c] += w * r[c];
                }
            }
            let [mx, my, sxx, syy, sxy] = acc;
            total += ssim_formula(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my);
        }
    }
    Ok(total / (ox * oy) as f64)
}

/// Mean over Z-slices of the 2-D [`ssim_slice`].
pub fn ssim<T: Copy + Into<f64> + Sync>(reference: &[T], predicted: &[T], dims: Dims) -> Result<f64> {
    check_len(reference.len(), predicted.len())?;
    if reference.len() != dims.len() {
        return Err(Error::Shape(format!(
            "{} values for volume {dims}",
            reference.len()
        )));
    }
    let plane = dims.nx * dims.ny;
    let mut sum = 0.0;
    for z in 0..dims.nz {
        let s = z * plane..(z + 1) * plane;
        sum += ssim_slice(&reference[s.clone()], &predicted[s], dims.nx, dims.ny)?;
    }
    Ok(sum / dims.nz as f64)
}

/// Equal-weight combination of PSNR (scaled by [`PSNR_MAX_DB`] after
/// clamping to `[0, 48]`), `1 - NRMSE` and SSIM.
pub fn score(psnr_db: f64, nrmse: f64, ssim: f64) -> Result<f64> {
    if psnr_db.is_nan() {
        return Err(Error::OutOfRange("PSNR is NaN".into()));
    }
    if !(0.0..=1.0).contains(&nrmse) {
        return Err(Error::OutOfRange(format!("NRMSE {nrmse} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&ssim) {
        return Err(Error::OutOfRange(format!("SSIM {ssim} outside [0, 1]")));
    }
    let p = psnr_db.clamp(0.0, PSNR_MAX_DB) / PSNR_MAX_DB;
    Ok((p + (1.0 - nrmse) + ssim) / 3.0)
}

/// Stored values per network weight.
pub fn compression_ratio(value_count: usize, weight_count: usize) -> Result<f64> {
    if weight_count == 0 {
        return Err(Error::OutOfRange("network has no weights".into()));
    }
    Ok(value_count as f64 / weight_count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub label: String,
    pub psnr_db: f64,
    pub nrmse: f64,
    pub ssim: f64,
    pub score: f64,
    pub compression: f64,
    pub seconds: f64,
}

/// Per-grid metrics averaged over grids, scored from the averages.
///
/// The score is computed from NRMSE clamped to at most 1 and SSIM clamped
/// to at least 0; for any reconstruction clamped to the normalized range
/// these clamps are inactive.
pub fn evaluate<T: Real>(
    reference: &MultiGridVolume,
    predicted: &MultiGridVolume,
    net: &FfNetwork<T>,
    include_encoder: bool,
    seconds: f64,
    label: &str,
) -> Result<QualityReport> {
    reference.dims().check_eq(&predicted.dims())?;
    if reference.grid_count() != predicted.grid_count() || reference.grid_count() == 0 {
        return Err(Error::Shape(format!(
            "reference has {} grids, prediction {}",
            reference.grid_count(),
            predicted.grid_count()
        )));
    }
    let dims = reference.dims();
    let g = reference.grid_count() as f64;
    let (mut p, mut n, mut s) = (0.0, 0.0, 0.0);
    for (r, q) in reference.grids().iter().zip(predicted.grids()) {
        p += psnr(&r.values, &q.values)?;
        n += nrmse(&r.values, &q.values)?;
        s += ssim(&r.values, &q.values, dims)?;
    }
    let (psnr_db, nrmse, ssim) = (p / g, n / g, s / g);
    Ok(QualityReport {
        label: label.to_string(),
        psnr_db,
        nrmse,
        ssim,
        score: score(psnr_db, nrmse.min(1.0), ssim.max(0.0))?,
        compression: compression_ratio(reference.value_count(), net.param_count(include_encoder))?,
        seconds,
    })
}

pub fn write_report_csv<W: Write>(mut w: W, reports: &[QualityReport]) -> Result<()> {
    writeln!(w, "variant,psnr_db,nrmse,ssim,score,time_s,compression")?;
    for r in reports {
        writeln!(
            w,
            "{},{:.4},{:.6},{:.6},{:.6},{:.3},{:.4}",
            r.label, r.psnr_db, r.nrmse, r.ssim, r.score, r.seconds, r.compression
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned text table with the columns of the CSV export.
pub fn format_report_table(reports: &[QualityReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max(7);
    let mut out = format!(
        "{:<width$} | {:>9} | {:>6} | {:>6} | {:>5} | {:>9} | {:>11}\n",
        "variant", "PSNR (dB)", "NRMSE", "SSIM", "Score", "Time (s)", "Compression"
    );
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{:<width$} | {:>9.2} | {:>6.3} | {:>6.3} | {:>5.2} | {:>9.1} | {:>11.2}\n",
            r.label, r.psnr_db, r.nrmse, r.ssim, r.score, r.seconds, r.compression
        ));
    }
    out
}
