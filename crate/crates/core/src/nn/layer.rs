use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trainable weight and bias plus their momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub weight_momentum: Tensor<T>,
    pub bias_momentum: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        let weight_momentum = Tensor::zeros(weight.shape());
        let bias_momentum = Tensor::zeros(bias.shape());
        LayerParams {
            weight,
            bias,
            weight_momentum,
            bias_momentum,
        }
    }

    pub fn zeros(weight_shape: &[usize], outputs: usize) -> Self {
        Self::new(Tensor::zeros(weight_shape), Tensor::zeros(&[outputs]))
    }

    /// Weights and biases uniform in `[-s, s]` with `s = sqrt(1 / fan_in)`.
    pub fn uniform<R: Rng + ?Sized>(weight_shape: &[usize], rng: &mut R) -> Self {
        let outputs = weight_shape[0];
        let fan_in: usize = weight_shape[1..].iter().product();
        let bound = (1.0 / fan_in as f64).sqrt();
        let weight = Tensor::uniform(weight_shape, bound, rng);
        let bias = Tensor::uniform(&[outputs], bound, rng);
        Self::new(weight, bias)
    }

    /// Weights uniform in `[-s, s]` with `s = sqrt(6 / fan_in)`, zero biases; keeps the
    /// activation variance of ReLU layers roughly constant with depth.
    pub fn he_uniform<R: Rng + ?Sized>(weight_shape: &[usize], rng: &mut R) -> Self {
        let fan_in: usize = weight_shape[1..].iter().product();
        let weight = Tensor::uniform(weight_shape, (6.0 / fan_in as f64).sqrt(), rng);
        Self::new(weight, Tensor::zeros(&[weight_shape[0]]))
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1..].iter().product()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn grads_zeros(&self) -> LayerGrads<T> {
        LayerGrads {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            weight_momentum: self.weight_momentum.cast(),
            bias_momentum: self.bias_momentum.cast(),
        }
    }
}

/// Gradients for one [`LayerParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerGrads<T> {
    pub fn accumulate(&mut self, other: &LayerGrads<T>) -> Result<()> {
        self.weight.add_assign(&other.weight)?;
        self.bias.add_assign(&other.bias)
    }

    pub fn scale(&mut self, factor: T) {
        self.weight.scale(factor);
        self.bias.scale(factor);
    }

    pub fn check_matches(&self, params: &LayerParams<T>) -> Result<()> {
        if self.weight.shape() != params.weight.shape() || self.bias.shape() != params.bias.shape()
        {
            return Err(Error::Config(format!(
                "gradient shapes {:?}/{:?} do not match parameters {:?}/{:?}",
                self.weight.shape(),
                self.bias.shape(),
                params.weight.shape(),
                params.bias.shape()
            )));
        }
        Ok(())
    }
}
