//! The conditional generator `x̂ = G(z, c; θ)`.
//!
//! A small fully connected network: sigmoid hidden layers followed by a linear
//! output layer whose input is the last hidden activation concatenated with the
//! one-hot class label.
//!
//! # Flat parameter layout
//!
//! The flat view of θ lists layers from input to output. Each layer contributes
//! its weight matrix in row-major order (`rows = out units`, `cols = in units`)
//! followed by its bias vector. For the default architecture (2 → 4 → 4 → 2
//! with two classes) that is
//!
//! | layer    | weights | bias | offset |
//! |----------|---------|------|--------|
//! | hidden 1 | 4 × 2   | 4    | 0      |
//! | hidden 2 | 4 × 4   | 4    | 12     |
//! | output   | 2 × 6   | 2    | 32     |
//!
//! giving 46 parameters. The ordering is part of the checkpoint format.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: usize, num_classes: usize },
    #[error("latent coordinate {index} = {value} outside [0, 1]")]
    LatentOutOfRange { index: usize, value: f64 },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("initialization scale must be finite and non-negative, got {0}")]
    InvalidScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    #[default]
    Sigmoid,
}

/// How the class label enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// One-hot label concatenated to the last hidden activation.
    #[default]
    OutputLayerConcat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorArch {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_dim: usize,
    pub num_classes: usize,
    pub conditioning: Conditioning,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        GeneratorArch {
            input_dim: 2,
            hidden_layers: vec![4, 4],
            hidden_activation: HiddenActivation::Sigmoid,
            output_dim: 2,
            num_classes: 2,
            conditioning: Conditioning::OutputLayerConcat,
        }
    }
}

impl GeneratorArch {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.hidden_layers.is_empty() {
            return Err(GeneratorError::InvalidArch("no hidden layers".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.num_classes == 0 {
            return Err(GeneratorError::InvalidArch("zero-sized dimension".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(GeneratorError::InvalidArch("zero-width hidden layer".into()));
        }
        Ok(())
    }

    /// `(rows, cols)` of every layer's weight matrix, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut fan_in = self.input_dim;
        for &width in &self.hidden_layers {
            shapes.push((width, fan_in));
            fan_in = width;
        }
        let out_in = match self.conditioning {
            Conditioning::OutputLayerConcat => fan_in + self.num_classes,
        };
        shapes.push((self.output_dim, out_in));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// Prior noise `z`, each coordinate in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentSample(Vec<f64>);

impl LatentSample {
    pub fn new(z: Vec<f64>) -> Result<Self, GeneratorError> {
        for (index, &value) in z.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(GeneratorError::LatentOutOfRange { index, value });
            }
        }
        Ok(LatentSample(z))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(pub usize);

impl ClassLabel {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn one_hot(self, num_classes: usize) -> Vec<f64> {
        let mut v = vec![0.0; num_classes];
        if let Some(slot) = v.get_mut(self.0) {
            *slot = 1.0;
        }
        v
    }
}

/// Generated datum `x̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeneratedDatum(pub Vec<f64>);

impl std::ops::Deref for GeneratedDatum {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    rows: usize,
    cols: usize,
    /// Row-major, `rows × cols`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn affine(&self, input: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = &self.weights[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + self.bias[r]
            })
            .collect()
    }

    fn weight(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.cols + c]
    }

    fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

/// Generator parameters θ, consistent with a [`GeneratorArch`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    arch: GeneratorArch,
    layers: Vec<Layer>,
}

/// Jacobian `∂x̂/∂θ`, row-major `output_dim × num_params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Vector-Jacobian product `gᵀ J`.
    pub fn vjp(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (o, &go) in g.iter().enumerate().take(self.rows) {
            for (acc, j) in out.iter_mut().zip(self.row(o)) {
                *acc += go * j;
            }
        }
        out
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

struct Trace {
    /// `activations[0]` is `z`; `activations[l]` is hidden layer `l` output.
    activations: Vec<Vec<f64>>,
    /// Input of the output layer, `[h_L ; one_hot(c)]`.
    output_input: Vec<f64>,
    output: Vec<f64>,
}

impl GeneratorParams {
    /// Weights uniform in `[-scale, scale]`, biases zero.
    pub fn init_random(arch: &GeneratorArch, seed: u64, scale: f64) -> Result<Self, GeneratorError> {
        arch.validate()?;
        if !scale.is_finite() || scale < 0.0 {
            return Err(GeneratorError::InvalidScale(scale));
        }
        let mut rng = seed::rng(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let weights = (0..rows * cols)
                    .map(|_| if scale == 0.0 { 0.0 } else { rng.random_range(-scale..=scale) })
                    .collect();
                Layer { rows, cols, weights, bias: vec![0.0; rows] }
            })
            .collect();
        Ok(GeneratorParams { arch: arch.clone(), layers })
    }

    pub fn from_flat(arch: &GeneratorArch, flat: &[f64]) -> Result<Self, GeneratorError> {
        arch.validate()?;
        let expected = arch.num_params();
        if flat.len() != expected {
            return Err(GeneratorError::DimensionMismatch { what: "flat parameters", expected, got: flat.len() });
        }
        if let Some(index) = flat.iter().position(|v| !v.is_finite()) {
            return Err(GeneratorError::NonFinite { index });
        }
        let mut offset = 0;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let weights = flat[offset..offset + rows * cols].to_vec();
                offset += rows * cols;
                let bias = flat[offset..offset + rows].to_vec();
                offset += rows;
                Layer { rows, cols, weights, bias }
            })
            .collect();
        Ok(GeneratorParams { arch: arch.clone(), layers })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    /// Flat index of the first output-layer bias entry.
    pub fn output_bias_offset(&self) -> usize {
        self.num_params() - self.arch.output_dim
    }

    /// Columns of the output weight matrix that multiply the one-hot label,
    /// returned as `output_dim × num_classes`.
    pub fn conditioning_columns(&self) -> Vec<Vec<f64>> {
        let out = self.layers.last().expect("validated arch has an output layer");
        let first = out.cols - self.arch.num_classes;
        (0..out.rows)
            .map(|r| (first..out.cols).map(|c| out.weight(r, c)).collect())
            .collect()
    }

    fn check_inputs(&self, z: &LatentSample, c: ClassLabel) -> Result<(), GeneratorError> {
        if z.0.len() != self.arch.input_dim {
            return Err(GeneratorError::DimensionMismatch {
                what: "latent sample",
                expected: self.arch.input_dim,
                got: z.0.len(),
            });
        }
        if c.0 >= self.arch.num_classes {
            return Err(GeneratorError::ClassOutOfRange { index: c.0, num_classes: self.arch.num_classes });
        }
        Ok(())
    }

    fn trace(&self, z: &LatentSample, c: ClassLabel) -> Trace {
        let (hidden, output_layer) = self.layers.split_at(self.layers.len() - 1);
        let mut activations = vec![z.0.clone()];
        for layer in hidden {
            let pre = layer.affine(activations.last().unwrap());
            activations.push(pre.into_iter().map(sigmoid).collect());
        }
        let mut output_input = activations.last().unwrap().clone();
        output_input.extend(c.one_hot(self.arch.num_classes));
        let output = output_layer[0].affine(&output_input);
        Trace { activations, output_input, output }
    }

    pub fn forward(&self, z: &LatentSample, c: ClassLabel) -> Result<GeneratedDatum, GeneratorError> {
        self.check_inputs(z, c)?;
        Ok(GeneratedDatum(self.trace(z, c).output))
    }

    /// Exact `∂x̂/∂θ` by reverse-mode differentiation over the fixed layer stack.
    pub fn jacobian_params(&self, z: &LatentSample, c: ClassLabel) -> Result<Jacobian, GeneratorError> {
        self.check_inputs(z, c)?;
        let trace = self.trace(z, c);
        let n_params = self.num_params();
        let out_dim = self.arch.output_dim;
        let mut data = vec![0.0; out_dim * n_params];

        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.len();
                Some(o)
            })
            .collect();
        let last = self.layers.len() - 1;
        let out_layer = &self.layers[last];
        let hidden_width = *self.arch.hidden_layers.last().unwrap();

        for o in 0..out_dim {
            let row = &mut data[o * n_params..(o + 1) * n_params];
            let base = offsets[last];
            for (j, &a) in trace.output_input.iter().enumerate() {
                row[base + o * out_layer.cols + j] = a;
            }
            row[base + out_layer.rows * out_layer.cols + o] = 1.0;

            // δ for the last hidden layer: ∂x̂_o/∂pre-activation.
            let h = &trace.activations[last];
            let mut delta: Vec<f64> =
                (0..hidden_width).map(|k| out_layer.weight(o, k) * h[k] * (1.0 - h[k])).collect();

            for l in (0..last).rev() {
                let layer = &self.layers[l];
                let input = &trace.activations[l];
                let base = offsets[l];
                for k in 0..layer.rows {
                    for i in 0..layer.cols {
                        row[base + k * layer.cols + i] = delta[k] * input[i];
                    }
                    row[base + layer.rows * layer.cols + k] = delta[k];
                }
                if l > 0 {
                    delta = (0..layer.cols)
                        .map(|i| {
                            let back: f64 = (0..layer.rows).map(|k| layer.weight(k, i) * delta[k]).sum();
                            back * input[i] * (1.0 - input[i])
                        })
                        .collect();
                }
            }
        }
        Ok(Jacobian { rows: out_dim, cols: n_params, data })
    }

    /// Gradient ascent step `θ' = θ + α·grad`.
    pub fn apply_update(&self, grad: &[f64], alpha: f64) -> Result<Self, GeneratorError> {
        let n = self.num_params();
        if grad.len() != n {
            return Err(GeneratorError::DimensionMismatch { what: "gradient", expected: n, got: grad.len() });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(GeneratorError::NonFinite { index });
        }
        let flat: Vec<f64> = self.to_flat().iter().zip(grad).map(|(t, g)| t + alpha * g).collect();
        Self::from_flat(&self.arch, &flat)
    }
}
