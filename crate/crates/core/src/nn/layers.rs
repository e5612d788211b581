use rand::Rng;

use super::ops::{self, LayerNormCache};
use super::{Scalar, Tensor};
use crate::error::Result;

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<F> {
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

impl<F: Scalar> ParamTensor<F> {
    pub fn new(value: Tensor<F>) -> Self {
        let grad = Tensor::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Tensor::zeros(rows, cols))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::new(Tensor::full(rows, cols, F::one()))
    }

    /// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (rows + cols))`.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self::uniform(rows, cols, limit, rng)
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| F::from_f64(rng.gen_range(-limit..=limit)))
            .collect();
        Self::new(Tensor::from_vec(rows, cols, data).expect("length matches"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn cast<G: Scalar>(&self) -> ParamTensor<G> {
        ParamTensor {
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

/// Fully connected layer `y = x·W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: ParamTensor<F>,
    pub bias: Option<ParamTensor<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            weight: ParamTensor::glorot(inputs, outputs, rng),
            bias: bias.then(|| ParamTensor::zeros(1, outputs)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = ops::matmul(x, &self.weight.value)?;
        match &self.bias {
            Some(b) => ops::add_bias(&y, &b.value),
            None => Ok(y),
        }
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Tensor<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
        let (dx, dw) = ops::matmul_backward(x, &self.weight.value, dy)?;
        self.weight.grad.add_assign(&dw)?;
        if let Some(b) = &mut self.bias {
            b.grad.add_assign(&dy.sum_rows())?;
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut ParamTensor<F>)> {
        let mut out = vec![("weight", &mut self.weight)];
        if let Some(b) = &mut self.bias {
            out.push(("bias", b));
        }
        out
    }

    pub fn params(&self) -> Vec<(&'static str, &ParamTensor<F>)> {
        let mut out = vec![("weight", &self.weight)];
        if let Some(b) = &self.bias {
            out.push(("bias", b));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: ParamTensor<F>,
    pub beta: ParamTensor<F>,
    pub eps: f64,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(width: usize, eps: f64) -> Self {
        Self {
            gamma: ParamTensor::ones(1, width),
            beta: ParamTensor::zeros(1, width),
            eps,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, LayerNormCache<F>)> {
        ops::layer_norm(x, &self.gamma.value, &self.beta.value, F::from_f64(self.eps))
    }

    pub fn backward(&mut self, cache: &LayerNormCache<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
        let (dx, dg, db) = ops::layer_norm_backward(cache, &self.gamma.value, dy)?;
        self.gamma.grad.add_assign(&dg)?;
        self.beta.grad.add_assign(&db)?;
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut ParamTensor<F>)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    pub fn params(&self) -> Vec<(&'static str, &ParamTensor<F>)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }
}
