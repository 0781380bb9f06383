use rand::Rng;
use rand_distr::StandardNormal;

use super::Real;

/// Random Fourier features `[cos(2π s·Bp), sin(2π s·Bp)]` where every row of
/// `B` belongs to a frequency band with its own learnable scale `s`.
///
/// Scales are stored as logarithms so they stay positive under any update.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierEncoder<T> {
    /// `k` frozen projection rows drawn from N(0, 1).
    pub(crate) basis: Vec<[T; 3]>,
    pub(crate) log_scales: Vec<T>,
    pub(crate) band_of_row: Vec<usize>,
    pub(crate) gauss_multiplier: f64,
}

/// Even partition of `k` rows into `bands` contiguous bands.
pub(crate) fn band_partition(k: usize, bands: usize) -> Vec<usize> {
    (0..k).map(|row| row * bands / k).collect()
}

impl<T: Real> FourierEncoder<T> {
    /// Band `g` starts at scale `gm * 2^g`.
    pub fn random<R: Rng>(k: usize, bands: usize, gauss_multiplier: f64, rng: &mut R) -> Self {
        let basis = (0..k)
            .map(|_| {
                let mut row = [T::zero(); 3];
                for v in &mut row {
                    *v = T::cast(rng.sample::<f64, _>(StandardNormal));
                }
                row
            })
            .collect();
        let log_scales = (0..bands)
            .map(|g| T::cast((gauss_multiplier * 2f64.powi(g as i32)).ln()))
            .collect();
        FourierEncoder {
            basis,
            log_scales,
            band_of_row: band_partition(k, bands),
            gauss_multiplier,
        }
    }

    /// Assembles an encoder from explicit parts.
    pub fn from_parts(basis: Vec<[T; 3]>, scales: &[T], gauss_multiplier: f64) -> Self {
        assert!(!scales.is_empty() && scales.len() <= basis.len().max(1));
        assert!(scales.iter().all(|&s| s > T::zero()), "band scales must be positive");
        let k = basis.len();
        FourierEncoder {
            basis,
            log_scales: scales.iter().map(|s| s.ln()).collect(),
            band_of_row: band_partition(k, scales.len()),
            gauss_multiplier,
        }
    }

    pub fn features(&self) -> usize {
        self.basis.len()
    }

    pub fn output_width(&self) -> usize {
        2 * self.basis.len()
    }

    pub fn band_count(&self) -> usize {
        self.log_scales.len()
    }

    pub fn basis(&self) -> &[[T; 3]] {
        &self.basis
    }

    pub fn band_of_row(&self) -> &[usize] {
        &self.band_of_row
    }

    pub fn gauss_multiplier(&self) -> f64 {
        self.gauss_multiplier
    }

    pub fn log_scales(&self) -> &[T] {
        &self.log_scales
    }

    pub fn scales(&self) -> Vec<T> {
        self.log_scales.iter().map(|s| s.exp()).collect()
    }

    /// Per-row angular frequency factor `2π s_band(row)`.
    fn row_factors(&self) -> Vec<T> {
        let two_pi = T::PI() + T::PI();
        let scales = self.scales();
        self.band_of_row.iter().map(|&b| two_pi * scales[b]).collect()
    }

    #[inline]
    fn project(row: &[T; 3], p: &[T; 3]) -> T {
        row[0] * p[0] + row[1] * p[1] + row[2] * p[2]
    }

    /// Writes `rows x 2k` features: cosines in the first `k` columns,
    /// sines in the last `k`.
    pub fn encode_into(&self, coords: &[[T; 3]], out: &mut [T]) {
        let k = self.features();
        assert_eq!(out.len(), coords.len() * 2 * k);
        let factors = self.row_factors();
        for (p, feat) in coords.iter().zip(out.chunks_exact_mut(2 * k)) {
            let (cos, sin) = feat.split_at_mut(k);
            for i in 0..k {
                let (s, c) = (factors[i] * Self::project(&self.basis[i], p)).sin_cos();
                cos[i] = c;
                sin[i] = s;
            }
        }
    }

    pub fn encode(&self, p: [T; 3]) -> Vec<T> {
        let mut out = vec![T::zero(); self.output_width()];
        self.encode_into(&[p], &mut out);
        out
    }

    /// Accumulates the loss gradient w.r.t. each log-scale, given the encoded
    /// features and the gradient flowing into them.
    ///
    /// With `z = 2π e^θ (B_i·p)`, `dz/dθ = z`, so each row contributes
    /// `z * (cos'·g_cos + sin'·g_sin) = z * (-sin z · g_cos + cos z · g_sin)`.
    pub(crate) fn accumulate_scale_grad(
        &self,
        coords: &[[T; 3]],
        features: &[T],
        feature_grad: &[T],
        grad: &mut [T],
    ) {
        let k = self.features();
        let factors = self.row_factors();
        for ((p, feat), g) in coords
            .iter()
            .zip(features.chunks_exact(2 * k))
            .zip(feature_grad.chunks_exact(2 * k))
        {
            for i in 0..k {
                let z = factors[i] * Self::project(&self.basis[i], p);
                let (c, s) = (feat[i], feat[k + i]);
                grad[self.band_of_row[i]] = grad[self.band_of_row[i]] + z * (c * g[k + i] - s * g[i]);
            }
        }
    }
}
