//! Mini-batch training with seeded per-epoch shuffles and Adam updates, and
//! full-box reconstruction from a trained network.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{unit_coordinate, CoordinateDataset};
use crate::error::{Error, Result};
use crate::net::{FfNetwork, NetShape, Real, STRICT_CHUNK_ROWS};
use crate::volume::{Dims, Grid, MultiGridVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Fixed-size work chunks; results do not depend on the thread count.
    Strict,
    /// One chunk per worker thread.
    Fast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Fourier feature count `k`.
    pub features: usize,
    pub gauss_multiplier: f64,
    pub hidden_layers: usize,
    pub width: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub band_count: usize,
    pub precision: Precision,
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            features: 1280,
            gauss_multiplier: 2.5,
            hidden_layers: 8,
            width: 512,
            batch_size: 24,
            learning_rate: 0.0003,
            seed: 0,
            band_count: 1,
            precision: Precision::F32,
            exec: ExecMode::Strict,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self, outputs: usize) -> NetShape {
        NetShape {
            features: self.features,
            hidden_layers: self.hidden_layers,
            width: self.width,
            outputs,
            bands: self.band_count,
            gauss_multiplier: self.gauss_multiplier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        self.shape(1).validate()
    }

    fn chunk_rows(&self, batch: usize) -> usize {
        match self.exec {
            ExecMode::Strict => STRICT_CHUNK_ROWS,
            ExecMode::Fast => batch.div_ceil(rayon::current_num_threads()),
        }
    }
}

/// Adam with bias correction, no weight decay and a constant step size.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        assert_eq!(params.len(), grads.len());
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let b1 = T::cast(self.beta1);
        let b2 = T::cast(self.beta2);
        let one = T::one();
        let eps = T::cast(self.epsilon);
        let c1 = T::cast(1.0 / (1.0 - self.beta1.powi(self.step)));
        let c2 = T::cast(1.0 / (1.0 - self.beta2.powi(self.step)));
        let lr = T::cast(self.learning_rate);
        // subnormal moments are numerically irrelevant but very slow
        let tiny = T::min_positive_value();
        let flush = |x: T| if x.abs() < tiny { T::zero() } else { x };
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..p.len() {
                m[i] = flush(b1 * m[i] + (one - b1) * g[i]);
                v[i] = flush(b2 * v[i] + (one - b2) * g[i] * g[i]);
                let m_hat = m[i] * c1;
                let v_hat = v[i] * c2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// SplitMix64 finalizer over `seed` and the epoch index; seeds each epoch's
/// shuffle independently of how many epochs ran before.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row visit order for one epoch: a seeded permutation of `0..rows`.
pub fn epoch_order(rows: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch));
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Wall time since training started.
    pub elapsed: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    pub history: Vec<EpochStats>,
    pub seconds: f64,
    pub network: FfNetwork<T>,
    pub rows: usize,
    pub label: String,
}

impl<T> TrainReport<T> {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.mean_loss).collect()
    }

    pub fn seconds_per_epoch(&self) -> f64 {
        self.seconds / self.history.len().max(1) as f64
    }
}

/// Trains a freshly initialized network (seeded by `config.seed`).
pub fn train<T: Real>(
    dataset: &CoordinateDataset,
    config: &TrainConfig,
    label: &str,
) -> Result<TrainReport<T>> {
    config.validate()?;
    let net = FfNetwork::init(&config.shape(dataset.grid_count), config.seed)?;
    train_network(net, dataset, config, label, |_| {})
}

/// Runs `config.epochs` epochs over `dataset`, starting from `net`.
/// `on_epoch` sees the stats of every finished epoch.
pub fn train_network<T: Real>(
    mut net: FfNetwork<T>,
    dataset: &CoordinateDataset,
    config: &TrainConfig,
    label: &str,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if net.outputs() != dataset.grid_count {
        return Err(Error::Shape(format!(
            "network has {} outputs, dataset has {} grids",
            net.outputs(),
            dataset.grid_count
        )));
    }
    let grids = dataset.grid_count;
    let rows = dataset.len();
    let bs = config.batch_size.min(rows);
    let chunk_rows = config.chunk_rows(bs);
    let mut adam = Adam::new(config.learning_rate);
    let mut coords: Vec<[T; 3]> = Vec::with_capacity(bs);
    let mut targets: Vec<T> = Vec::with_capacity(bs * grids);
    let mut history = Vec::with_capacity(config.epochs);

    let start = Instant::now();
    for epoch in 0..config.epochs {
        let order = epoch_order(rows, config.seed, epoch);
        let mut weighted = 0.0f64;
        for batch in order.chunks(bs) {
            coords.clear();
            targets.clear();
            for &row in batch {
                let c = dataset.coords[row];
                coords.push([T::cast(c[0] as f64), T::cast(c[1] as f64), T::cast(c[2] as f64)]);
                targets.extend(dataset.target(row).iter().map(|&t| T::cast(t as f64)));
            }
            let (loss, grads) = net.backward_chunked(&coords, &targets, chunk_rows)?;
            weighted += loss * batch.len() as f64;
            adam.step(net.trainable_mut(), grads.slices());
        }
        if !net.all_finite() {
            return Err(Error::OutOfRange(format!(
                "non-finite parameter after epoch {}",
                epoch + 1
            )));
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: weighted / rows as f64,
            elapsed: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);
    }
    let seconds = start.elapsed().as_secs_f64();

    Ok(TrainReport {
        history,
        seconds,
        network: net,
        rows,
        label: label.to_string(),
    })
}

/// Evaluates the network at every voxel of `dims` and clamps to `[0, 1]`.
/// Grids are named by `names`, which must match the network's output count.
pub fn reconstruct_full<T: Real>(
    net: &FfNetwork<T>,
    dims: Dims,
    names: &[String],
) -> Result<MultiGridVolume> {
    let outputs = net.outputs();
    if names.len() != outputs {
        return Err(Error::Shape(format!(
            "{} grid names for {} network outputs",
            names.len(),
            outputs
        )));
    }
    let plane = dims.nx * dims.ny;
    let slabs: Vec<Vec<T>> = (0..dims.nz)
        .into_par_iter()
        .map(|z| {
            let coords: Vec<[T; 3]> = (0..plane)
                .map(|i| {
                    let c = unit_coordinate(dims, i % dims.nx, i / dims.nx, z);
                    [T::cast(c[0] as f64), T::cast(c[1] as f64), T::cast(c[2] as f64)]
                })
                .collect();
            net.forward(&coords)
        })
        .collect();

    let mut grids: Vec<Grid> = names
        .iter()
        .map(|name| Grid {
            name: name.clone(),
            values: vec![0.0; dims.len()],
        })
        .collect();
    for (z, slab) in slabs.iter().enumerate() {
        for (i, row) in slab.chunks_exact(outputs).enumerate() {
            for (grid, v) in grids.iter_mut().zip(row) {
                grid.values[z * plane + i] = v.as_f64().clamp(0.0, 1.0) as f32;
            }
        }
    }
    MultiGridVolume::new(dims, grids)
}

pub fn default_grid_names(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("grid{i}")).collect()
}

/// Loss history as CSV: `epoch,mean_loss,seconds_elapsed`.
pub fn write_loss_csv<W: Write>(mut w: W, history: &[EpochStats]) -> Result<()> {
    writeln!(w, "epoch,mean_loss,seconds_elapsed")?;
    for e in history {
        writeln!(w, "{},{:.9e},{:.6}", e.epoch, e.mean_loss, e.elapsed)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            features: 4,
            hidden_layers: 1,
            width: 8,
            batch_size: 4,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    fn toy() -> CoordinateDataset {
        let coords: Vec<[f32; 3]> = (0..10).map(|i| [i as f32 / 9.0, 0.5, 0.25]).collect();
        let targets = (0..10).map(|i| (i % 3) as f32 / 2.0).collect();
        CoordinateDataset::from_rows(coords, targets, 1)
    }

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.epochs, c.features, c.hidden_layers, c.width, c.batch_size),
            (100, 1280, 8, 512, 24)
        );
        assert_eq!(c.gauss_multiplier, 2.5);
        assert_eq!(c.learning_rate, 0.0003);
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        for epoch in 0..5 {
            let mut order = epoch_order(1000, 42, epoch);
            order.sort_unstable();
            assert!(order.iter().copied().eq(0..1000));
        }
        assert_ne!(epoch_order(100, 42, 0), epoch_order(100, 42, 1));
        assert_eq!(epoch_order(100, 42, 3), epoch_order(100, 42, 3));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::<f64>::new(0.1);
        let mut p = [1.0, -2.0];
        adam.step(vec![&mut p[..]], vec![&[0.5, -3.0][..]]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn rejects_empty_dataset_and_bad_config() {
        let empty = CoordinateDataset::from_rows(vec![], vec![], 1);
        assert!(matches!(
            train::<f32>(&empty, &tiny_config(), "x"),
            Err(Error::EmptyDataset)
        ));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..tiny_config()
        };
        assert!(train::<f32>(&toy(), &bad, "x").is_err());
    }

    #[test]
    fn history_and_time_are_recorded() {
        let r = train::<f32>(&toy(), &tiny_config(), "avm").unwrap();
        assert_eq!(r.history.len(), 3);
        assert!(r.seconds > 0.0);
        assert_eq!(r.rows, 10);
        assert_eq!(r.label, "avm");
        assert!(r.history.windows(2).all(|w| w[0].elapsed <= w[1].elapsed));
    }

    #[test]
    fn reconstruct_zero_network_is_clamped_bias() {
        let mut net = FfNetwork::<f32>::init(&tiny_config().shape(2), 0).unwrap();
        for l in &mut net.layers {
            l.weights.fill(0.0);
        }
        net.layers.last_mut().unwrap().bias = vec![1.7, 0.4];
        let dims = Dims::new(3, 2, 4);
        let v = reconstruct_full(&net, dims, &default_grid_names(2)).unwrap();
        assert_eq!(v.dims(), dims);
        assert_eq!(v.grid_count(), 2);
        assert!(v.grids()[0].values.iter().all(|&x| x == 1.0));
        assert!(v.grids()[1].values.iter().all(|&x| x == 0.4));
    }

    #[test]
    fn loss_csv_format() {
        let mut buf = Vec::new();
        let h = [EpochStats {
            epoch: 1,
            mean_loss: 0.25,
            elapsed: 1.5,
        }];
        write_loss_csv(&mut buf, &h).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,mean_loss,seconds_elapsed\n1,2.500000000e-1,1.500000\n"
        );
    }
}
