//! LeNet-style convolutional surrogate: permeability image in, extraction
//! rate out.
//!
//! conv(k×k, 1→c1) + ReLU → maxpool 2 → conv(k×k, c1→c2) + ReLU → maxpool 2
//! → flatten → dense(h1) + ReLU → dense(h2) + ReLU → dense(1).
//!
//! With the reference sizes (24×24 input, 5×5 kernels, 6 and 16 maps) the
//! spatial pipeline is 24 → 20 → 10 → 6 → 3 and the flattened feature vector
//! has 16·3·3 = 144 entries. The raw output `r` becomes a rate through
//! `softplus(r) · output_scale`.

pub mod adam;
pub mod checkpoint;
pub mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fvm::PermeabilityField;
use layers::*;

/// Layer sizes. Spatial sizes are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub kernel: usize,
    pub c1: usize,
    pub c2: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Architecture {
    pub const LENET: Architecture = Architecture { input: 24, kernel: 5, c1: 6, c2: 16, hidden1: 120, hidden2: 84 };

    pub fn conv1_out(&self) -> usize {
        self.input + 1 - self.kernel
    }
    pub fn pool1_out(&self) -> usize {
        self.conv1_out() / 2
    }
    pub fn conv2_out(&self) -> usize {
        self.pool1_out() + 1 - self.kernel
    }
    pub fn pool2_out(&self) -> usize {
        self.conv2_out() / 2
    }
    pub fn flat(&self) -> usize {
        self.c2 * self.pool2_out() * self.pool2_out()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.input, self.kernel, self.c1, self.c2, self.hidden1, self.hidden2];
        if dims.iter().any(|d| *d == 0 || *d > 4096) {
            return Err(Error::InvalidInput(format!("architecture sizes out of range: {self:?}")));
        }
        if self.input < self.kernel || self.pool1_out() < self.kernel || self.pool2_out() == 0 {
            return Err(Error::InvalidInput(format!("input {} too small for kernel {}", self.input, self.kernel)));
        }
        Ok(())
    }

    /// Parameter tensors in declaration order: name and shape.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>)> {
        let k = self.kernel;
        vec![
            ("conv1.weight", vec![self.c1, 1, k, k]),
            ("conv1.bias", vec![self.c1]),
            ("conv2.weight", vec![self.c2, self.c1, k, k]),
            ("conv2.bias", vec![self.c2]),
            ("dense1.weight", vec![self.hidden1, self.flat()]),
            ("dense1.bias", vec![self.hidden1]),
            ("dense2.weight", vec![self.hidden2, self.hidden1]),
            ("dense2.bias", vec![self.hidden2]),
            ("dense3.weight", vec![1, self.hidden2]),
            ("dense3.bias", vec![1]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    fn offsets(&self) -> [usize; 11] {
        let mut o = [0; 11];
        for (i, (_, s)) in self.tensors().iter().enumerate() {
            o[i + 1] = o[i] + s.iter().product::<usize>();
        }
        o
    }
}

/// All weights and biases, flattened in declaration order. Gradients use the
/// same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub data: Vec<f64>,
}

macro_rules! tensor_views {
    ($($name:ident = $i:expr),*) => {
        $(pub fn $name(&self) -> &[f64] {
            let o = self.arch.offsets();
            &self.data[o[$i]..o[$i + 1]]
        })*
    };
}

impl NetworkParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self { arch, data: vec![0.0; arch.param_count()] })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = arch.kernel * arch.kernel;
        let fans = [
            (k2, arch.c1 * k2),
            (arch.c1 * k2, arch.c2 * k2),
            (arch.flat(), arch.hidden1),
            (arch.hidden1, arch.hidden2),
            (arch.hidden2, 1),
        ];
        let o = arch.offsets();
        for (layer, (fan_in, fan_out)) in fans.iter().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p.data[o[2 * layer]..o[2 * layer + 1]] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    tensor_views!(conv1_w = 0, conv1_b = 1, conv2_w = 2, conv2_b = 3, dense1_w = 4, dense1_b = 5, dense2_w = 6, dense2_b = 7, dense3_w = 8, dense3_b = 9);

    /// Mutable view of tensor `i` in declaration order.
    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        let o = self.arch.offsets();
        &mut self.data[o[i]..o[i + 1]]
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        let o = self.arch.offsets();
        &self.data[o[i]..o[i + 1]]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub pool1: Vec<f64>,
    pub arg1: Vec<usize>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    /// Flattened features.
    pub pool2: Vec<f64>,
    pub arg2: Vec<usize>,
    pub z3: Vec<f64>,
    pub a3: Vec<f64>,
    pub z4: Vec<f64>,
    pub a4: Vec<f64>,
    pub raw: f64,
}

/// Raw scalar output with the activations needed by [`backward`].
pub fn forward_raw(params: &NetworkParams, input: &[f64]) -> Result<ForwardCache> {
    let a = params.arch;
    if input.len() != a.input * a.input {
        return Err(Error::ShapeMismatch { expected: a.input * a.input, actual: input.len() });
    }
    let z1 = conv2d_forward(input, 1, a.input, a.input, params.conv1_w(), params.conv1_b(), a.c1, a.kernel);
    let a1 = relu(&z1);
    let (pool1, arg1) = maxpool2_forward(&a1, a.c1, a.conv1_out(), a.conv1_out());
    let z2 = conv2d_forward(&pool1, a.c1, a.pool1_out(), a.pool1_out(), params.conv2_w(), params.conv2_b(), a.c2, a.kernel);
    let a2 = relu(&z2);
    let (pool2, arg2) = maxpool2_forward(&a2, a.c2, a.conv2_out(), a.conv2_out());
    assert_eq!(pool2.len(), a.flat(), "flattened feature count");
    let z3 = dense_forward(&pool2, params.dense1_w(), params.dense1_b());
    let a3 = relu(&z3);
    let z4 = dense_forward(&a3, params.dense2_w(), params.dense2_b());
    let a4 = relu(&z4);
    let raw = dense_forward(&a4, params.dense3_w(), params.dense3_b())[0];
    Ok(ForwardCache { input: input.to_vec(), z1, a1, pool1, arg1, z2, a2, pool2, arg2, z3, a3, z4, a4, raw })
}

/// Gradients of `upstream · raw` with respect to all parameters and the
/// input.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, upstream: f64) -> (NetworkParams, Vec<f64>) {
    let a = params.arch;
    let mut grads = NetworkParams { arch: a, data: vec![0.0; params.data.len()] };
    let (g_a4, g_w3, g_b3) = dense_backward(&cache.a4, params.dense3_w(), &[upstream]);
    let g_z4 = relu_backward(&cache.z4, &g_a4);
    let (g_a3, g_w2, g_b2) = dense_backward(&cache.a3, params.dense2_w(), &g_z4);
    let g_z3 = relu_backward(&cache.z3, &g_a3);
    let (g_pool2, g_w1, g_b1) = dense_backward(&cache.pool2, params.dense1_w(), &g_z3);
    let g_a2 = maxpool2_backward(&g_pool2, &cache.arg2, cache.a2.len());
    let g_z2 = relu_backward(&cache.z2, &g_a2);
    let (g_pool1, g_cw2, g_cb2) =
        conv2d_backward(&cache.pool1, a.c1, a.pool1_out(), a.pool1_out(), params.conv2_w(), a.c2, a.kernel, &g_z2);
    let g_a1 = maxpool2_backward(&g_pool1, &cache.arg1, cache.a1.len());
    let g_z1 = relu_backward(&cache.z1, &g_a1);
    let (g_in, g_cw1, g_cb1) = conv2d_backward(&cache.input, 1, a.input, a.input, params.conv1_w(), a.c1, a.kernel, &g_z1);
    for (i, g) in [g_cw1, g_cb1, g_cw2, g_cb2, g_w1, g_b1, g_w2, g_b2, g_w3, g_b3].into_iter().enumerate() {
        grads.tensor_mut(i).copy_from_slice(&g);
    }
    (grads, g_in)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Input standardization of log10 permeability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean_log_perm: f64,
    pub std_log_perm: f64,
}

impl Normalization {
    pub fn apply(&self, perm: &PermeabilityField) -> Vec<f64> {
        perm.values().iter().map(|k| (k.log10() - self.mean_log_perm) / self.std_log_perm).collect()
    }

    /// Same as [`apply`](Self::apply) for fields already in log10 form.
    pub fn apply_log(&self, log_perm: &[f64]) -> Vec<f64> {
        log_perm.iter().map(|l| (l - self.mean_log_perm) / self.std_log_perm).collect()
    }
}

/// Network plus the constants that map fields in and rates out.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub params: NetworkParams,
    pub normalization: Normalization,
    /// m³/s per unit of softplus output.
    pub output_scale: f64,
}

/// A forward evaluation in physical units.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub rate: f64,
    /// d rate / d raw
    pub rate_slope: f64,
    pub cache: ForwardCache,
}

impl Surrogate {
    pub fn predict_normalized(&self, input: &[f64]) -> Result<Prediction> {
        let cache = forward_raw(&self.params, input)?;
        let rate = softplus(cache.raw) * self.output_scale;
        if !rate.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(Prediction { rate, rate_slope: sigmoid(cache.raw) * self.output_scale, cache })
    }

    pub fn predict(&self, perm: &PermeabilityField) -> Result<f64> {
        Ok(self.predict_normalized(&self.normalization.apply(perm))?.rate)
    }
}

/// Extraction rate for a normalized input: `softplus(raw) · output_scale`.
pub fn forward(params: &NetworkParams, input: &[f64], output_scale: f64) -> Result<f64> {
    Ok(softplus(forward_raw(params, input)?.raw) * output_scale)
}
