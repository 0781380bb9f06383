//! The coordinate network: a Fourier feature encoder followed by a ReLU MLP
//! with a linear output layer, plus exact backpropagation.

mod encoder;
mod real;

pub(crate) use encoder::band_partition;
pub use encoder::FourierEncoder;
pub use real::Real;
pub(crate) use real::{gemm, MatRef};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::CoordConvention;
use crate::error::{Error, Result};
use crate::volume::NormalizationParams;

/// Architecture of an [`FfNetwork`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetShape {
    /// Fourier feature count `k`; the encoder emits `2k` values.
    pub features: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub outputs: usize,
    pub bands: usize,
    pub gauss_multiplier: f64,
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.features == 0 {
            return bad("feature count must be positive");
        }
        if self.hidden_layers == 0 || self.width == 0 {
            return bad("need at least one hidden layer of positive width");
        }
        if self.outputs == 0 {
            return bad("need at least one output grid");
        }
        if self.bands == 0 || self.bands > self.features {
            return bad("band count must be in 1..=feature count");
        }
        if !(self.gauss_multiplier > 0.0 && self.gauss_multiplier.is_finite()) {
            return bad("gauss multiplier must be positive and finite");
        }
        Ok(())
    }

    /// Weights and biases of the MLP alone.
    pub fn mlp_param_count(&self) -> usize {
        let (k2, n, m, g) = (2 * self.features, self.width, self.hidden_layers, self.outputs);
        (k2 * n + n) + (m - 1) * (n * n + n) + (n * g + g)
    }
}

/// Affine layer `y = x W + b` with `W` stored row-major `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero bias.
    fn he_uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = T::cast(rng.random_range(-limit..limit));
        }
        layer
    }

    fn forward(&self, x: &[T], rows: usize, out: &mut [T]) {
        for row in out.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias);
        }
        gemm(
            MatRef::new(x, rows, self.inputs),
            MatRef::new(&self.weights, self.inputs, self.outputs),
            T::one(),
            out,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfNetwork<T> {
    pub encoder: FourierEncoder<T>,
    /// `hidden_layers` ReLU layers followed by the linear output layer.
    pub layers: Vec<Dense<T>>,
    pub convention: CoordConvention,
    pub normalization: Option<NormalizationParams>,
}

/// Gradient buffers laid out like the trainable parameters of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
    /// Gradient w.r.t. the log band scales.
    pub log_scales: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &FfNetwork<T>) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
            log_scales: vec![T::zero(); net.encoder.band_count()],
        }
    }

    fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    /// Views in the same order as [`FfNetwork::trainable_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out.push(&self.log_scales);
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out.push(&mut self.log_scales);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, v| m.max(v.as_f64().abs()))
    }
}

/// Rows handled by one worker in forward/backward. Fixed so gradient sums
/// are reduced in the same order whatever the thread count.
pub const STRICT_CHUNK_ROWS: usize = 64;

impl<T: Real> FfNetwork<T> {
    /// Deterministic for a given `(shape, seed)`. Randomness is drawn in
    /// `f64` so `f32` and `f64` networks from the same seed agree up to
    /// rounding.
    pub fn init(shape: &NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = FourierEncoder::random(
            shape.features,
            shape.bands,
            shape.gauss_multiplier,
            &mut rng,
        );
        let mut layers = Vec::with_capacity(shape.hidden_layers + 1);
        let mut inputs = 2 * shape.features;
        for _ in 0..shape.hidden_layers {
            layers.push(Dense::he_uniform(inputs, shape.width, &mut rng));
            inputs = shape.width;
        }
        layers.push(Dense::he_uniform(inputs, shape.outputs, &mut rng));
        Ok(FfNetwork {
            encoder,
            layers,
            convention: CoordConvention::UnitCube,
            normalization: None,
        })
    }

    /// Same network with every parameter converted to another precision.
    pub fn cast<U: Real>(&self) -> FfNetwork<U> {
        let conv = |v: &[T]| -> Vec<U> { v.iter().map(|x| U::cast(x.as_f64())).collect() };
        FfNetwork {
            encoder: FourierEncoder {
                basis: self
                    .encoder
                    .basis
                    .iter()
                    .map(|r| [U::cast(r[0].as_f64()), U::cast(r[1].as_f64()), U::cast(r[2].as_f64())])
                    .collect(),
                log_scales: conv(&self.encoder.log_scales),
                band_of_row: self.encoder.band_of_row.clone(),
                gauss_multiplier: self.encoder.gauss_multiplier,
            },
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: conv(&l.weights),
                    bias: conv(&l.bias),
                })
                .collect(),
            convention: self.convention,
            normalization: self.normalization.clone(),
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            features: self.encoder.features(),
            hidden_layers: self.layers.len() - 1,
            width: self.layers[0].outputs,
            outputs: self.outputs(),
            bands: self.encoder.band_count(),
            gauss_multiplier: self.encoder.gauss_multiplier(),
        }
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Number of stored parameters. The MLP alone counts weights and biases;
    /// the encoder adds its `3k` projection entries and one scale per band.
    pub fn param_count(&self, include_encoder: bool) -> usize {
        let mlp: usize = self
            .layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum();
        if include_encoder {
            mlp + 3 * self.encoder.features() + self.encoder.band_count()
        } else {
            mlp
        }
    }

    /// Mutable views of everything the optimizer updates. The projection
    /// matrix is frozen and not included.
    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out.push(&mut self.encoder.log_scales);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .chain(&self.encoder.log_scales)
            .all(|v| v.is_finite())
    }

    /// Activations of every layer for one chunk. `acts[0]` is the encoder
    /// output, `acts[i]` the post-ReLU output of hidden layer `i`, and the
    /// last entry the linear network output.
    fn activations(&self, coords: &[[T; 3]]) -> Vec<Vec<T>> {
        let rows = coords.len();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut feat = vec![T::zero(); rows * self.encoder.output_width()];
        self.encoder.encode_into(coords, &mut feat);
        acts.push(feat);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![T::zero(); rows * layer.outputs];
            layer.forward(&acts[i], rows, &mut out);
            if i < last {
                for v in &mut out {
                    *v = v.max(T::zero());
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Predictions, row-major `rows x outputs`.
    pub fn forward(&self, coords: &[[T; 3]]) -> Vec<T> {
        let chunks: Vec<Vec<T>> = coords
            .par_chunks(STRICT_CHUNK_ROWS)
            .map(|c| self.activations(c).pop().unwrap())
            .collect();
        chunks.concat()
    }

    /// Mean squared error over all rows and outputs, with its gradient.
    pub fn backward(&self, coords: &[[T; 3]], targets: &[T]) -> Result<(f64, Gradients<T>)> {
        self.backward_chunked(coords, targets, STRICT_CHUNK_ROWS)
    }

    /// [`backward`](Self::backward) with an explicit work split. Per-chunk
    /// gradients are merged sequentially in chunk order.
    pub fn backward_chunked(
        &self,
        coords: &[[T; 3]],
        targets: &[T],
        chunk_rows: usize,
    ) -> Result<(f64, Gradients<T>)> {
        let outputs = self.outputs();
        if coords.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if targets.len() != coords.len() * outputs {
            return Err(Error::Shape(format!(
                "{} targets for {} rows of {} outputs",
                targets.len(),
                coords.len(),
                outputs
            )));
        }
        let chunk_rows = chunk_rows.max(1);
        let scale = T::cast(2.0 / (coords.len() * outputs) as f64);
        let parts: Vec<(f64, Gradients<T>)> = coords
            .par_chunks(chunk_rows)
            .zip(targets.par_chunks(chunk_rows * outputs))
            .map(|(c, t)| self.chunk_gradients(c, t, scale))
            .collect();
        let mut parts = parts.into_iter();
        let (mut sse, mut grads) = parts.next().expect("non-empty batch");
        for (s, g) in parts {
            sse += s;
            grads.add_assign(&g);
        }
        Ok((sse / (coords.len() * outputs) as f64, grads))
    }

    fn chunk_gradients(&self, coords: &[[T; 3]], targets: &[T], scale: T) -> (f64, Gradients<T>) {
        let rows = coords.len();
        let mut acts = self.activations(coords);
        let mut grads = Gradients::zeros_like(self);

        let mut delta = acts.pop().unwrap();
        let mut sse = 0.0f64;
        for (d, &t) in delta.iter_mut().zip(targets) {
            let r = *d - t;
            sse += r.as_f64() * r.as_f64();
            *d = r * scale;
        }

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let g = &mut grads.layers[i];
            gemm(
                MatRef::new(input, rows, layer.inputs).t(),
                MatRef::new(&delta, rows, layer.outputs),
                T::zero(),
                &mut g.weights,
            );
            for row in delta.chunks_exact(layer.outputs) {
                for (b, &d) in g.bias.iter_mut().zip(row) {
                    *b = *b + d;
                }
            }
            let mut upstream = vec![T::zero(); rows * layer.inputs];
            gemm(
                MatRef::new(&delta, rows, layer.outputs),
                MatRef::new(&layer.weights, layer.inputs, layer.outputs).t(),
                T::zero(),
                &mut upstream,
            );
            if i > 0 {
                for (u, &a) in upstream.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *u = T::zero();
                    }
                }
            }
            delta = upstream;
        }

        self.encoder
            .accumulate_scale_grad(coords, &acts[0], &delta, &mut grads.log_scales);
        (sse, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(k: usize, m: usize, n: usize, outputs: usize) -> NetShape {
        NetShape {
            features: k,
            hidden_layers: m,
            width: n,
            outputs,
            bands: 1,
            gauss_multiplier: 2.5,
        }
    }

    #[test]
    fn full_scale_parameter_counts() {
        let s = shape(1280, 8, 512, 2);
        assert_eq!(s.mlp_param_count(), 3_150_850);
        assert_eq!(
            s.mlp_param_count(),
            2560 * 512 + 512 + 7 * (512 * 512 + 512) + 512 * 2 + 2
        );
        let net = FfNetwork::<f32>::init(&s, 0).unwrap();
        assert_eq!(net.param_count(false), 3_150_850);
        assert_eq!(net.param_count(true), 3_154_691);
        assert_eq!(net.encoder.scales(), vec![2.5]);
    }

    #[test]
    fn smallest_network_has_five_mlp_params() {
        let net = FfNetwork::<f32>::init(&shape(1, 1, 1, 1), 0).unwrap();
        assert_eq!(net.param_count(false), 5);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let s = shape(8, 2, 16, 2);
        let a = FfNetwork::<f32>::init(&s, 11).unwrap();
        assert_eq!(a, FfNetwork::<f32>::init(&s, 11).unwrap());
        assert_ne!(a, FfNetwork::<f32>::init(&s, 12).unwrap());
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let limit = (6.0f32 / 16.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn rejects_invalid_shapes() {
        for s in [
            shape(0, 1, 1, 1),
            shape(1, 0, 1, 1),
            shape(1, 1, 0, 1),
            shape(1, 1, 1, 0),
            NetShape {
                bands: 3,
                ..shape(2, 1, 1, 1)
            },
            NetShape {
                gauss_multiplier: 0.0,
                ..shape(2, 1, 1, 1)
            },
        ] {
            assert!(FfNetwork::<f32>::init(&s, 0).is_err(), "{s:?}");
        }
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = FfNetwork::<f32>::init(&shape(4, 2, 8, 2), 0).unwrap();
        for l in &mut net.layers {
            l.weights.fill(0.0);
        }
        net.layers.last_mut().unwrap().bias = vec![0.25, -0.5];
        let out = net.forward(&[[0.1, 0.2, 0.3], [0.9, 0.0, 0.5]]);
        assert_eq!(out, vec![0.25, -0.5, 0.25, -0.5]);
    }

    /// k=2, m=1, n=2, one output, every weight set by hand.
    #[test]
    fn hand_computed_tiny_network() {
        let encoder = FourierEncoder::from_parts(vec![[0.25, 0.0, 0.0], [0.0, 0.5, 0.0]], &[1.0], 1.0);
        let hidden = Dense {
            inputs: 4,
            outputs: 2,
            // rows: cos0, cos1, sin0, sin1
            weights: vec![1.0, 0.0, 0.0, 2.0, 1.0, -1.0, 0.5, 0.0],
            bias: vec![0.1, -3.0],
        };
        let out_layer = Dense {
            inputs: 2,
            outputs: 1,
            weights: vec![2.0, 1.0],
            bias: vec![0.5],
        };
        let net = FfNetwork {
            encoder,
            layers: vec![hidden, out_layer],
            convention: CoordConvention::UnitCube,
            normalization: None,
        };
        // p = (1, 1, 0): angles 2π·0.25 = π/2 and 2π·0.5 = π
        // features [cos π/2, cos π, sin π/2, sin π] = [0, -1, 1, 0]
        // h0 = 0·1 + -1·0 + 1·1 + 0·0.5 + 0.1 = 1.1
        // h1 = relu(0·0 + -1·2 + 1·-1 + 0·0 - 3) = relu(-6) = 0
        // y = 2·1.1 + 1·0 + 0.5 = 2.7
        let y = net.forward(&[[1.0, 1.0, 0.0]]);
        assert!((y[0] - 2.7f64).abs() < 1e-12, "{y:?}");
    }

    #[test]
    fn batch_invariance() {
        let net = FfNetwork::<f32>::init(&shape(16, 3, 32, 2), 5).unwrap();
        let coords: Vec<[f32; 3]> = (0..150)
            .map(|i| {
                let t = i as f32 / 150.0;
                [t, 1.0 - t, (t * 7.0).fract()]
            })
            .collect();
        let all = net.forward(&coords);
        for i in [0, 63, 64, 149] {
            assert_eq!(net.forward(&coords[i..=i]), all[2 * i..2 * i + 2].to_vec());
        }
        assert_eq!(net.forward(&coords), all);
    }

    #[test]
    fn perfect_targets_give_zero_loss_and_gradient() {
        let net = FfNetwork::<f64>::init(&shape(4, 2, 8, 2), 1).unwrap();
        let coords = vec![[0.1, 0.5, 0.9], [0.7, 0.3, 0.2], [0.0, 1.0, 0.5]];
        let targets = net.forward(&coords);
        let (loss, grads) = net.backward(&coords, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn doubled_residuals_quadruple_loss() {
        let net = FfNetwork::<f64>::init(&shape(4, 2, 8, 1), 2).unwrap();
        let coords = vec![[0.1, 0.5, 0.9], [0.7, 0.3, 0.2]];
        let pred = net.forward(&coords);
        let shifted = |s: f64| -> Vec<f64> {
            pred.iter()
                .enumerate()
                .map(|(i, p)| p + if i % 2 == 0 { s } else { -s })
                .collect()
        };
        let (l1, _) = net.backward(&coords, &shifted(0.3)).unwrap();
        let (l2, _) = net.backward(&coords, &shifted(0.6)).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let net = FfNetwork::<f64>::init(&shape(2, 1, 2, 2), 0).unwrap();
        assert!(net.backward(&[[0.0; 3]], &[0.0]).is_err());
        assert!(net.backward(&[], &[]).is_err());
    }

    #[test]
    fn chunking_only_changes_rounding() {
        let net = FfNetwork::<f64>::init(&shape(4, 2, 8, 2), 3).unwrap();
        let coords: Vec<[f64; 3]> = (0..40).map(|i| [i as f64 / 40.0, 0.3, 0.7]).collect();
        let targets: Vec<f64> = (0..80).map(|i| (i % 5) as f64 / 5.0).collect();
        let (la, ga) = net.backward_chunked(&coords, &targets, 7).unwrap();
        let (lb, gb) = net.backward_chunked(&coords, &targets, 40).unwrap();
        assert!((la - lb).abs() < 1e-12);
        for (a, b) in ga.slices().iter().zip(gb.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
