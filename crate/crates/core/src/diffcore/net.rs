//! Dense multi-layer perceptrons with explicit forward and backward passes.
//!
//! Matrices are batch-major: one row per sample. Weights are stored as
//! `(fan_in, fan_out)` so a layer computes `x · W + b`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{reject, Result};

use super::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
    Softmax,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Identity => 3,
            Activation::Softmax => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            3 => Activation::Identity,
            4 => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Identity => {}
            Activation::Softmax => softmax_rows_inplace(z),
        }
    }

    /// Turns the gradient w.r.t. the activation output into the gradient
    /// w.r.t. the pre-activation, given the activation output `y`.
    fn backprop(self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
            Activation::Sigmoid => grad.zip_mut_with(y, |g, &y| *g *= y * (1.0 - y)),
            Activation::Identity => {}
            Activation::Softmax => {
                for (mut g, y) in grad.rows_mut().into_iter().zip(y.rows()) {
                    let dot = g.dot(&y);
                    g.zip_mut_with(&y, |g, &y| *g = y * (*g - dot));
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax_rows_inplace(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub fn log_softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

impl NetSpec {
    /// `layer_sizes` lists the input width followed by each layer's output
    /// width; `activations` has one entry per layer.
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            reject!("a network needs an input size and at least one layer");
        }
        if activations.len() != layer_sizes.len() - 1 {
            reject!(
                "{} activations given for {} layers",
                activations.len(),
                layer_sizes.len() - 1
            );
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            reject!("layer sizes must be positive: {layer_sizes:?}");
        }
        let last = activations.len() - 1;
        if activations[..last].contains(&Activation::Softmax) {
            reject!("softmax is only allowed as the final activation");
        }
        Ok(Self {
            layer_sizes,
            activations,
        })
    }

    /// Hidden layers share one activation; the last layer gets `output`.
    pub fn mlp(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        let n = sizes.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::new(sizes.to_vec(), acts)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameters of one MLP. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    spec: NetSpec,
    layers: Vec<Layer>,
}

pub type NetGrads = NetParams;

/// Intermediate values kept by [`NetParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
    /// Post-activation output of every layer.
    outputs: Vec<Array2<f64>>,
}

impl Cache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }

    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap()
    }
}

impl NetParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| {
                        rng.random_range(-limit..limit)
                    }),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self { spec, layers }
    }

    pub fn zeros(spec: NetSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { spec, layers }
    }

    pub fn from_layers(spec: NetSpec, layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            reject!(
                "{} layers given for a {}-layer spec",
                layers.len(),
                spec.num_layers()
            );
        }
        for (i, (layer, w)) in layers.iter().zip(spec.layer_sizes.windows(2)).enumerate() {
            if layer.weight.dim() != (w[0], w[1]) || layer.bias.len() != w[1] {
                reject!("layer {i} has shape {:?}, expected ({}, {})", layer.weight.dim(), w[0], w[1]);
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn forward(&self, batch: &Array2<f64>) -> Result<(Array2<f64>, Cache)> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            let mut z = x.dot(&layer.weight);
            z += &layer.bias;
            act.apply(&mut z);
            inputs.push(x);
            x = z;
            outputs.push(x.clone());
        }
        Ok((x, Cache { inputs, outputs }))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(batch)?;
        let mut x = batch.dot(&self.layers[0].weight);
        x += &self.layers[0].bias;
        self.spec.activations[0].apply(&mut x);
        for (layer, act) in self.layers.iter().zip(&self.spec.activations).skip(1) {
            let mut z = x.dot(&layer.weight);
            z += &layer.bias;
            act.apply(&mut z);
            x = z;
        }
        Ok(x)
    }

    /// Returns parameter gradients and the gradient w.r.t. the input batch.
    pub fn backward(
        &self,
        cache: &Cache,
        output_grad: &Array2<f64>,
    ) -> Result<(NetGrads, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            reject!("cache has {} layers, network has {}", cache.inputs.len(), self.layers.len());
        }
        for (i, (x, layer)) in cache.inputs.iter().zip(&self.layers).enumerate() {
            if x.ncols() != layer.weight.nrows() || cache.outputs[i].ncols() != layer.weight.ncols() {
                reject!("cache does not match network at layer {i}");
            }
        }
        let out = cache.output();
        if output_grad.dim() != out.dim() {
            reject!("output gradient shape {:?} vs output {:?}", output_grad.dim(), out.dim());
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            self.spec.activations[i].backprop(&cache.outputs[i], &mut g);
            let x = &cache.inputs[i];
            let gw = x.t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            let gx = g.dot(&self.layers[i].weight.t());
            grads.push(Layer {
                weight: gw,
                bias: gb,
            });
            g = gx;
        }
        grads.reverse();
        Ok((
            NetParams {
                spec: self.spec.clone(),
                layers: grads,
            },
            g,
        ))
    }

    fn check_input(&self, batch: &Array2<f64>) -> Result<()> {
        if batch.ncols() != self.spec.input_dim() {
            reject!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.spec.input_dim()
            );
        }
        Ok(())
    }
}

impl ParamSet for NetParams {
    fn num_params(&self) -> usize {
        self.spec.num_params()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = src[at];
                at += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = src[at];
                at += 1;
            }
        }
        at
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: Array2<f64>, b: Array1<f64>, act: Activation) -> NetParams {
        let spec = NetSpec::new(vec![w.nrows(), w.ncols()], vec![act]).unwrap();
        NetParams::from_layers(spec, vec![Layer { weight: w, bias: b }]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(Array2::eye(3), Array1::zeros(3), Activation::Identity);
        let x = array![[1.0, -2.0, 3.5]];
        assert_eq!(net.forward(&x).unwrap().0, x);
    }

    #[test]
    fn relu_affine_layer() {
        let net = single(array![[2.0]], array![1.0], Activation::Relu);
        assert_eq!(net.forward(&array![[3.0]]).unwrap().0, array![[7.0]]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let net = single(array![[0.3, -1.0], [2.0, 0.5]], Array1::zeros(2), Activation::Sigmoid);
        let (y, _) = net.forward(&Array2::zeros((4, 2))).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = single(Array2::eye(3), Array1::zeros(3), Activation::Identity);
        assert!(net.forward(&Array2::zeros((2, 4))).is_err());
        let (_, cache) = net.forward(&Array2::zeros((2, 3))).unwrap();
        assert!(net.backward(&cache, &Array2::zeros((3, 3))).is_err());
        let other = single(Array2::eye(2), Array1::zeros(2), Activation::Identity);
        assert!(other.backward(&cache, &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(NetSpec::new(vec![3], vec![]).is_err());
        assert!(NetSpec::new(vec![3, 0], vec![Activation::Relu]).is_err());
        assert!(NetSpec::new(vec![3, 4, 2], vec![Activation::Softmax, Activation::Relu]).is_err());
        assert!(NetSpec::new(vec![3, 4, 2], vec![Activation::Relu, Activation::Softmax]).is_ok());
    }

    // L = 0.5 * ||x W + b - t||^2 for a 2x2 layer, one sample.
    // dL/dW[i][j] = x[i] * (y[j] - t[j]); dL/db = y - t.
    #[test]
    fn linear_layer_gradient_by_hand() {
        let net = single(array![[1.0, 2.0], [3.0, 4.0]], array![0.5, -0.5], Activation::Identity);
        let x = array![[1.0, 2.0]];
        let t = array![[0.0, 1.0]];
        let (y, cache) = net.forward(&x).unwrap();
        // y = [1 + 6 + 0.5, 2 + 8 - 0.5] = [7.5, 9.5]
        assert_eq!(y, array![[7.5, 9.5]]);
        let err = &y - &t; // [7.5, 8.5]
        let (g, gx) = net.backward(&cache, &err).unwrap();
        assert_eq!(g.layers()[0].weight, array![[7.5, 8.5], [15.0, 17.0]]);
        assert_eq!(g.layers()[0].bias, array![7.5, 8.5]);
        // dL/dx = err · W^T = [7.5 + 17, 22.5 + 34]
        assert_eq!(gx, array![[24.5, 56.5]]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = NetSpec::mlp(&[4, 5, 3], Activation::Tanh, Activation::Sigmoid).unwrap();
        let net = NetParams::init(spec, &mut rng);
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = net.forward(&x).unwrap();
        let (g, gx) = net.backward(&cache, &Array2::zeros((3, 3))).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = NetSpec::mlp(&[6, 8, 5], Activation::Relu, Activation::Softmax).unwrap();
        let net = NetParams::init(spec, &mut rng);
        let x = Array2::from_shape_fn((10, 6), |_| rng.random_range(-5.0..5.0));
        let y = net.predict(&x).unwrap();
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_is_deterministic_and_matches_predict() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = NetSpec::mlp(&[5, 7, 7, 2], Activation::Relu, Activation::Identity).unwrap();
        let net = NetParams::init(spec, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let a = net.forward(&x).unwrap().0;
        let b = net.forward(&x).unwrap().0;
        assert_eq!(a, b);
        assert_eq!(a, net.predict(&x).unwrap());
    }

    #[test]
    fn init_respects_glorot_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = NetSpec::mlp(&[10, 20], Activation::Identity, Activation::Identity).unwrap();
        let net = NetParams::init(spec, &mut rng);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(net.layers()[0].weight.iter().all(|w| w.abs() <= limit));
        assert!(net.layers()[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        let ls = log_softmax_rows(&array![[1000.0, 0.0]]);
        assert!(ls[[0, 0]].abs() < 1e-12 && ls[[0, 1]].is_finite());
    }
}
