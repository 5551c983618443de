//! Dense feed-forward networks with a hand-written backward pass.
//!
//! Each layer computes `y = activation(x · Wᵀ + b)` on a `[batch × in]` input,
//! with `W` stored `[out × in]`. A forward pass caches what `backward` needs;
//! any mutable access to the parameters drops that cache.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{sigmoid, softplus};
use super::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 || z.is_nan() {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => sigmoid(z),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Sigmoid => 2,
            Activation::Softplus => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Identity,
            2 => Activation::Sigmoid,
            3 => Activation::Softplus,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::dims("layer bias", weight.rows(), bias.len()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// He-scaled normal weights for relu layers, LeCun-scaled otherwise; zero bias.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let gain = if activation == Activation::Relu {
            2.0
        } else {
            1.0
        };
        let std = (gain / in_dim.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is positive and finite");
        let data = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Matrix::from_vec(out_dim, in_dim, data).expect("sized above"),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Inverted dropout applied after every relu layer of a forward pass.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    masks: Vec<Option<Vec<f64>>>,
}

/// Gradients of a scalar loss with respect to every parameter and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub input: Matrix,
}

impl NetGradients {
    /// Parameter gradients in the same order as [`MlpNetwork::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.data());
            out.push(b.as_slice());
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

#[derive(Debug, Clone, Default)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
    cache: Option<ForwardCache>,
}

impl PartialEq for MlpNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl MlpNetwork {
    /// An empty layer list is allowed and acts as the identity map.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dims(
                    format!("layer {} input", i + 1),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self {
            layers,
            cache: None,
        })
    }

    /// Random network with `dims = [in, h1, ..., out]`: relu on hidden
    /// layers, `output` on the last one.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], output: Activation, rng: &mut R) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { Activation::Relu };
                Layer::random(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Self {
            layers,
            cache: None,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.layers.first().map(Layer::in_dim)
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.last().map(Layer::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// Per-layer outputs of the last forward pass.
    pub fn cached_activations(&self) -> Option<&[Matrix]> {
        self.cache.as_ref().map(|c| c.post.as_slice())
    }

    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix> {
        self.run_forward::<rand_chacha::ChaCha8Rng>(input, None)
    }

    pub fn forward_with_dropout<R: Rng + ?Sized>(
        &mut self,
        input: &Matrix,
        dropout: Dropout<'_, R>,
    ) -> Result<Matrix> {
        self.run_forward(input, Some(dropout))
    }

    /// Forward pass that leaves the cache untouched, for shared read-only use.
    pub fn infer(&self, input: &Matrix) -> Result<Matrix> {
        let cache = self.propagate::<rand_chacha::ChaCha8Rng>(input, None)?;
        Ok(cache.post.last().cloned().unwrap_or_else(|| input.clone()))
    }

    fn run_forward<R: Rng + ?Sized>(
        &mut self,
        input: &Matrix,
        dropout: Option<Dropout<'_, R>>,
    ) -> Result<Matrix> {
        let cache = self.propagate(input, dropout)?;
        let out = cache.post.last().cloned().unwrap_or_else(|| input.clone());
        self.cache = Some(cache);
        Ok(out)
    }

    fn propagate<R: Rng + ?Sized>(
        &self,
        input: &Matrix,
        mut dropout: Option<Dropout<'_, R>>,
    ) -> Result<ForwardCache> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = post.last().unwrap_or(input);
            if x.cols() != layer.in_dim() {
                return Err(Error::dims(
                    format!("layer {i} input"),
                    layer.in_dim(),
                    x.cols(),
                ));
            }
            let mut z = x.matmul_transposed(&layer.weight)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let mut y = z.clone();
            for v in y.data_mut() {
                *v = layer.activation.apply(*v);
            }
            let mask = match dropout.as_mut() {
                Some(d) if layer.activation == Activation::Relu && d.rate > 0.0 => {
                    let keep = 1.0 - d.rate;
                    let m: Vec<f64> = (0..y.data().len())
                        .map(|_| {
                            if d.rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    for (v, s) in y.data_mut().iter_mut().zip(&m) {
                        *v *= s;
                    }
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            post.push(y);
            masks.push(mask);
        }
        Ok(ForwardCache {
            input: input.clone(),
            pre,
            post,
            masks,
        })
    }

    /// Gradients of a scalar loss given `dL/d(output)` of the last forward pass.
    pub fn backward(&self, output_grad: &Matrix) -> Result<NetGradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::NoForwardCache("MlpNetwork"))?;
        let out = cache.post.last().unwrap_or(&cache.input);
        if output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
            return Err(Error::dims(
                "backward output_grad",
                out.rows() * out.cols(),
                output_grad.rows() * output_grad.cols(),
            ));
        }
        let n = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n];
        let mut biases = vec![Vec::new(); n];
        let mut grad = output_grad.clone();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let z = &cache.pre[i];
            let y = &cache.post[i];
            if let Some(mask) = &cache.masks[i] {
                for (g, s) in grad.data_mut().iter_mut().zip(mask) {
                    *g *= s;
                }
            }
            // With dropout the cached `y` is scaled; the activation derivative
            // only needs it for sigmoid, which never carries a mask.
            for ((g, &zv), &yv) in grad.data_mut().iter_mut().zip(z.data()).zip(y.data()) {
                *g *= layer.activation.derivative(zv, yv);
            }
            let x = if i == 0 {
                &cache.input
            } else {
                &cache.post[i - 1]
            };
            weights[i] = grad.transpose_matmul(x)?;
            let mut db = vec![0.0; layer.out_dim()];
            for r in 0..grad.rows() {
                for (b, g) in db.iter_mut().zip(grad.row(r)) {
                    *b += g;
                }
            }
            biases[i] = db;
            grad = grad.matmul(&layer.weight)?;
        }
        Ok(NetGradients {
            weights,
            biases,
            input: grad,
        })
    }

    /// Mutable parameter slices (weight, bias per layer). Drops the forward cache.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.cache = None;
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(layer.weight.data_mut());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data().len(), l.bias.len()])
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dims(
                "set_flat_params",
                self.param_count(),
                params.len(),
            ));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            slice.copy_from_slice(&params[offset..offset + slice.len()]);
            offset += slice.len();
        }
        Ok(())
    }
}
