use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::numerics::Matrix;

/// Fully connected layer `y = x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    /// He initialization: weights ~ N(0, 2/fan_in), zero bias.
    pub fn he<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("valid std");
        let data = (0..input * output).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Matrix::from_vec(input, output, data).expect("sized buffer"),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight)?;
        y.add_row_broadcast(&self.bias)?;
        Ok(y)
    }

    /// Returns `(grad wrt layer params, grad wrt input)`.
    pub fn backward(&self, input: &Matrix, grad_out: &Matrix) -> Result<(Linear, Matrix)> {
        let weight = input.t_matmul(grad_out)?;
        let bias = grad_out.sum_rows();
        let grad_in = grad_out.matmul_t(&self.weight)?;
        Ok((Linear { weight, bias }, grad_in))
    }
}

/// Stack of linear layers with ReLU between consecutive layers (none after
/// the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Input seen by each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pre: Vec<Matrix>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub fn he<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::he(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.input_dim() {
            return Err(shape_err(format!(
                "MLP expects {}-dim input, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            inputs.push(h);
            h = if l + 1 < self.layers.len() {
                z.map(|v| v.max(0.0))
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Forward pass without keeping activations.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(shape_err(format!(
                "MLP expects {}-dim input, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if l + 1 < self.layers.len() {
                h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Backpropagates `grad_out` (gradient wrt the MLP output). Returns the
    /// parameter gradients (as an `Mlp` of the same shape) and the gradient
    /// wrt the input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<(Mlp, Matrix)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let (lg, mut gin) = self.layers[l].backward(&cache.inputs[l], &g)?;
            grads.push(lg);
            if l > 0 {
                for (v, &z) in gin.data_mut().iter_mut().zip(cache.pre[l - 1].data()) {
                    if z <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            g = gin;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, g))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.tensors().zip(other.tensors()).all(|(a, b)| a.same_shape(b))
    }
}
