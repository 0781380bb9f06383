#![allow(dead_code, clippy::needless_range_loop)]

use ffvol::mask::VoxelMask;
use ffvol::net::{FfNetwork, NetShape};
use ffvol::volume::{Dims, MultiGridVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mask(dims: Dims, density: f64, rng: &mut impl Rng) -> VoxelMask {
    VoxelMask::from_fn(dims, |_| rng.random_bool(density))
}

/// Iterated fixed point of "set if any voxel in the clipped 3x3x3
/// neighbourhood was set", one full sweep per step.
pub fn brute_dilate(mask: &VoxelMask, steps: usize) -> VoxelMask {
    let d = mask.dims();
    let mut cur: Vec<bool> = (0..d.len()).map(|i| mask.get(i)).collect();
    for _ in 0..steps {
        let mut next = cur.clone();
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    let mut any = false;
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                if a < 0 || b < 0 || c < 0 {
                                    continue;
                                }
                                let (a, b, c) = (a as usize, b as usize, c as usize);
                                if a >= d.nx || b >= d.ny || c >= d.nz {
                                    continue;
                                }
                                any |= cur[c * d.nx * d.ny + b * d.nx + a];
                            }
                        }
                    }
                    next[z * d.nx * d.ny + y * d.nx + x] = any;
                }
            }
        }
        cur = next;
    }
    VoxelMask::from_fn(d, |i| cur[i])
}

pub fn masks_equal(a: &VoxelMask, b: &VoxelMask) -> bool {
    a.dims() == b.dims() && (0..a.len()).all(|i| a.get(i) == b.get(i))
}

pub fn scalar_avm(volume: &MultiGridVolume) -> Vec<bool> {
    let d = volume.dims();
    let mut out = vec![false; d.len()];
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let i = x + d.nx * (y + d.ny * z);
                out[i] = volume.grids().iter().any(|g| g.values[i] > 0.0);
            }
        }
    }
    out
}

pub fn naive_mse(r: &[f64], p: &[f64], d: Dims) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let i = d.index(x, y, z);
                sum += (r[i] - p[i]).powi(2);
                n += 1;
            }
        }
    }
    sum / n as f64
}

/// Direct per-window SSIM with a 2-D Gaussian weight, no separable sums.
pub fn brute_ssim_slice(r: &[f64], p: &[f64], nx: usize, ny: usize) -> f64 {
    const W: usize = 11;
    let sigma: f64 = 1.5;
    let mut w2 = [[0.0f64; W]; W];
    let mut total_w = 0.0;
    for (j, row) in w2.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total_w += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0usize;
    for oy in 0..=ny - W {
        for ox in 0..=nx - W {
            let (mut mx, mut my) = (0.0, 0.0);
            for j in 0..W {
                for i in 0..W {
                    let k = (oy + j) * nx + ox + i;
                    let w = w2[j][i] / total_w;
                    mx += w * r[k];
                    my += w * p[k];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for j in 0..W {
                for i in 0..W {
                    let k = (oy + j) * nx + ox + i;
                    let w = w2[j][i] / total_w;
                    vx += w * (r[k] - mx).powi(2);
                    vy += w * (p[k] - my).powi(2);
                    cxy += w * (r[k] - mx) * (p[k] - my);
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn mse_loss(net: &FfNetwork<f64>, coords: &[[f64; 3]], targets: &[f64]) -> f64 {
    let out = net.forward(coords);
    out.iter()
        .zip(targets)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / out.len() as f64
}

/// Largest relative error between analytic gradients and central
/// differences over every trainable parameter.
pub fn gradient_check(seed: u64) -> f64 {
    const H: f64 = 1e-5;
    let shape = NetShape {
        features: 4,
        hidden_layers: 2,
        width: 8,
        outputs: 2,
        bands: 1,
        gauss_multiplier: 2.5,
    };
    let mut net = FfNetwork::<f64>::init(&shape, seed).unwrap();
    let mut r = rng(seed ^ 0xA5A5);
    // nonzero biases so the check exercises them beyond the init point
    for l in &mut net.layers {
        l.bias.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
    }
    let rows = 6;
    let coords: Vec<[f64; 3]> = (0..rows)
        .map(|_| [r.random::<f64>(), r.random::<f64>(), r.random::<f64>()])
        .collect();
    let targets: Vec<f64> = (0..rows * 2).map(|_| r.random::<f64>()).collect();

    let (_, grads) = net.backward(&coords, &targets).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let mut worst = 0.0f64;
    for (s, ga) in analytic.iter().enumerate() {
        for (i, &a) in ga.iter().enumerate() {
            let orig = net.trainable_mut()[s][i];
            net.trainable_mut()[s][i] = orig + H;
            let up = mse_loss(&net, &coords, &targets);
            net.trainable_mut()[s][i] = orig - H;
            let down = mse_loss(&net, &coords, &targets);
            net.trainable_mut()[s][i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let denom = a.abs().max(numeric.abs());
            // both effectively zero, e.g. weights feeding a dead ReLU
            let rel = if denom < 1e-10 { 0.0 } else { (a - numeric).abs() / denom };
            worst = worst.max(rel);
        }
    }
    worst
}
