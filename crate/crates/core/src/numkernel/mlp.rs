//! Dense feed-forward networks with hand-written backpropagation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{check_len, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_len("matrix row", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * x + bias`.
    pub fn affine(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(bias[r], |acc, (w, xi)| acc + w * xi)
            })
            .collect()
    }

    /// `self^T * y`.
    pub fn transpose_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, yr) in y.iter().enumerate() {
            if *yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
        out
    }

    /// `self += y x^T`.
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        for (r, yr) in y.iter().enumerate() {
            if *yr == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += yr * xi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through pre-activation `z` and output `a`.
    /// The rectifier's subgradient at 0 is 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Feed-forward network: hidden layers use `hidden` activation, the output
/// layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Intermediates kept by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[i]` is the input to layer `i`; the last entry is the output.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("cache always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

/// Result of [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Parameter gradients, shaped like the model.
    pub params: Mlp,
    /// Gradient with respect to the network input.
    pub input: Vec<f64>,
}

impl Mlp {
    /// He-initialized network with layer sizes `sizes = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        let mut mlp = Mlp::zeros(sizes, hidden)?;
        for layer in &mut mlp.layers {
            let scale = (2.0 / layer.input_dim() as f64).sqrt();
            for w in layer.weight.as_mut_slice() {
                let z: f64 = StandardNormal.sample(rng);
                *w = z * scale;
            }
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize], hidden: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::domain(
                "an mlp needs at least input and output sizes",
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::domain("layer sizes must be positive"));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weight: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
                activation: if i + 1 == n {
                    Activation::Identity
                } else {
                    hidden
                },
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("an mlp needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_len("mlp layer chain", pair[0].output_dim(), pair[1].input_dim())?;
        }
        for layer in &layers {
            check_len("mlp bias", layer.output_dim(), layer.bias.len())?;
        }
        Ok(Mlp { layers })
    }

    /// Same architecture, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: vec![0.0; l.bias.len()],
                activation: l.activation,
            })
            .collect();
        Mlp { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    /// Layer sizes `[in, h1, ..., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    /// Multiplies the output layer's weights by `factor` and zeroes its bias.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.weight
                .as_mut_slice()
                .iter_mut()
                .for_each(|w| *w *= factor);
            last.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_len("mlp input", self.input_dim(), input.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for layer in &self.layers {
            let z = layer
                .weight
                .affine(activations.last().unwrap(), &layer.bias);
            let a: Vec<f64> = z.iter().map(|v| layer.activation.apply(*v)).collect();
            pre_activations.push(z);
            activations.push(a);
        }
        let out = activations.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                activations,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("mlp input", self.input_dim(), input.len())?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer
                .weight
                .affine(&x, &layer.bias)
                .into_iter()
                .map(|z| layer.activation.apply(z))
                .collect();
        }
        Ok(x)
    }

    pub fn backward(&self, cache: &ForwardCache, output_gradient: &[f64]) -> Result<Gradients> {
        check_len(
            "mlp output gradient",
            self.output_dim(),
            output_gradient.len(),
        )?;
        check_len(
            "mlp forward cache",
            self.layers.len() + 1,
            cache.activations.len(),
        )?;
        let mut grads = self.zeros_like();
        let mut delta = output_gradient.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[i];
            let a = &cache.activations[i + 1];
            for ((d, zi), ai) in delta.iter_mut().zip(z).zip(a) {
                *d *= layer.activation.derivative(*zi, *ai);
            }
            let g = &mut grads.layers[i];
            g.weight.add_outer(&delta, &cache.activations[i]);
            g.bias.iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
            delta = layer.weight.transpose_mul(&delta);
        }
        Ok(Gradients {
            params: grads,
            input: delta,
        })
    }

    /// `self += scale * other`; both must share an architecture.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (dst, src) in self
            .param_slices_mut()
            .into_iter()
            .zip(other.param_slices())
        {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for slice in self.param_slices_mut() {
            slice.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

impl Params for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
