//! The embedding network: a small fully-connected net whose output is
//! projected onto the unit sphere.
//!
//! Forward and backward passes are written out analytically, including the
//! Jacobian of the final normalization, `(I - e e^T) / ||y||`. Gradients
//! therefore flow through the normalized embedding exactly, which the
//! gradient-check tests rely on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{self, UnitVector, EPS_NORM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    // Derivative expressed in terms of the activation output.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Layer widths and the hidden activation. The final layer is always linear;
/// normalization onto the sphere happens after it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, embed_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden,
            embed_dim,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::InvalidArchitecture("input_dim must be >= 1".into()));
        }
        if self.embed_dim < 2 {
            return Err(Error::InvalidArchitecture(
                "embed_dim must be >= 2 for unit-sphere embeddings".into(),
            ));
        }
        if self.hidden.iter().any(|&w| w < 1) {
            return Err(Error::InvalidArchitecture("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// (fan_in, fan_out) per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.embed_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(fan_in, fan_out)| fan_in * fan_out + fan_out)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    // Row-major (fan_out x fan_in): row o holds the weights of output unit o.
    weights: Vec<f64>,
    bias: Vec<f64>,
    fan_in: usize,
    fan_out: usize,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
            fan_in,
            fan_out,
        }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.fan_out {
            let row = &self.weights[o * self.fan_in..(o + 1) * self.fan_in];
            out.push(vecmath::dot(row, input) + self.bias[o]);
        }
    }
}

/// Dense parameters of the embedding network.
///
/// Flattening order is layer-major, weights before bias, weights row-major.
/// That order is the contract for model averaging and for the flat vectors
/// stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelParamsRepr", try_from = "ModelParamsRepr")]
pub struct ModelParams {
    arch: Architecture,
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct ModelParamsRepr {
    arch: Architecture,
    values: Vec<f64>,
}

impl From<ModelParams> for ModelParamsRepr {
    fn from(p: ModelParams) -> Self {
        ModelParamsRepr {
            values: p.flatten(),
            arch: p.arch,
        }
    }
}

impl TryFrom<ModelParamsRepr> for ModelParams {
    type Error = Error;

    fn try_from(repr: ModelParamsRepr) -> Result<Self> {
        ModelParams::from_flat(&repr.arch, &repr.values)
    }
}

impl ModelParams {
    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// All-zero parameters of the same shape; the identity for accumulation.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| Layer::zeros(fan_in, fan_out))
            .collect();
        Ok(ModelParams {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    pub fn from_flat(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.param_count() {
            return Err(Error::ShapeMismatch);
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in arch.layer_dims() {
            let w_len = fan_in * fan_out;
            let weights = flat[offset..offset + w_len].to_vec();
            offset += w_len;
            let bias = flat[offset..offset + fan_out].to_vec();
            offset += fan_out;
            layers.push(Layer {
                weights,
                bias,
                fan_in,
                fan_out,
            });
        }
        Ok(ModelParams {
            arch: arch.clone(),
            layers,
        })
    }

    /// In-place `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::ShapeMismatch);
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d += a * s;
            }
            for (d, s) in dst.bias.iter_mut().zip(&src.bias) {
                *d += a * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                *w *= a;
            }
            for b in &mut layer.bias {
                *b *= a;
            }
        }
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    input: Vec<f64>,
    // Post-activation outputs of each hidden layer.
    hidden_activations: Vec<Vec<f64>>,
    raw_output: Vec<f64>,
    raw_norm: f64,
    embedding: Vec<f64>,
}

impl ForwardTrace {
    pub fn raw_norm(&self) -> f64 {
        self.raw_norm
    }
}

/// Scaled-uniform initialization: weights in +/- sqrt(6 / (fan_in + fan_out)),
/// biases zero.
pub fn init_params<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<ModelParams> {
    arch.validate()?;
    let mut layers = Vec::new();
    for (fan_in, fan_out) in arch.layer_dims() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        layers.push(Layer {
            weights,
            bias: vec![0.0; fan_out],
            fan_in,
            fan_out,
        });
    }
    Ok(ModelParams {
        arch: arch.clone(),
        layers,
    })
}

/// Run the network and project the raw output onto the unit sphere.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<(UnitVector, ForwardTrace)> {
    if x.len() != params.arch.input_dim {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: params.arch.input_dim,
        });
    }
    let n_layers = params.layers.len();
    let mut hidden_activations = Vec::with_capacity(n_layers - 1);
    let mut current = x.to_vec();
    let mut scratch = Vec::new();
    for (i, layer) in params.layers.iter().enumerate() {
        layer.apply(&current, &mut scratch);
        if i + 1 < n_layers {
            for z in &mut scratch {
                *z = params.arch.activation.apply(*z);
            }
            hidden_activations.push(scratch.clone());
        }
        std::mem::swap(&mut current, &mut scratch);
    }
    let raw_output = current;
    let raw_norm = vecmath::norm(&raw_output);
    if raw_norm.is_nan() || raw_norm <= EPS_NORM {
        return Err(Error::DegenerateVector { norm: raw_norm });
    }
    let embedding: Vec<f64> = raw_output.iter().map(|y| y / raw_norm).collect();
    let unit = vecmath::normalize(&raw_output)?;
    Ok((
        unit,
        ForwardTrace {
            input: x.to_vec(),
            hidden_activations,
            raw_output,
            raw_norm,
            embedding,
        },
    ))
}

/// Chain rule from a gradient w.r.t. the normalized embedding back to every
/// weight and bias. Returns a `ModelParams`-shaped gradient.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad_embedding: &[f64],
) -> Result<ModelParams> {
    let arch = &params.arch;
    if grad_embedding.len() != arch.embed_dim {
        return Err(Error::DimensionMismatch {
            left: grad_embedding.len(),
            right: arch.embed_dim,
        });
    }
    if trace.input.len() != arch.input_dim
        || trace.raw_output.len() != arch.embed_dim
        || trace.hidden_activations.len() != params.layers.len() - 1
        || trace
            .hidden_activations
            .iter()
            .zip(&params.layers)
            .any(|(a, layer)| a.len() != layer.fan_out)
    {
        return Err(Error::TraceMismatch);
    }

    let mut grad = ModelParams::zeros(arch)?;

    // Through the normalization: dL/dy = (g - (g . e) e) / ||y||.
    let e = &trace.embedding;
    let g_dot_e = vecmath::dot(grad_embedding, e);
    let mut delta: Vec<f64> = grad_embedding
        .iter()
        .zip(e)
        .map(|(g, ei)| (g - g_dot_e * ei) / trace.raw_norm)
        .collect();

    // Walk the layers backwards; delta is dL/d(pre-activation of layer l).
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input: &[f64] = if l == 0 {
            &trace.input
        } else {
            &trace.hidden_activations[l - 1]
        };
        {
            let g_layer = &mut grad.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut g_layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (gw, inp) in row.iter_mut().zip(input) {
                    *gw = d * inp;
                }
                g_layer.bias[o] = d;
            }
        }
        if l > 0 {
            let mut upstream = vec![0.0; layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (u, w) in upstream.iter_mut().zip(row) {
                    *u += d * w;
                }
            }
            let act = &trace.hidden_activations[l - 1];
            delta = upstream
                .iter()
                .zip(act)
                .map(|(u, a)| u * arch.activation.derivative(*a))
                .collect();
        }
    }
    Ok(grad)
}
