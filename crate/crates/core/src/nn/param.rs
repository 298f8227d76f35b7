use rand::Rng as _;

use super::tensor::{Real, Tensor};
use crate::rng::Rng;

/// A trainable tensor with its gradient slot.
#[derive(Debug, Clone)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

impl<F: Real> Parameter<F> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Parameter {
            name: name.into(),
            value: Tensor::zeros(shape),
            grad: Tensor::zeros(shape),
        }
    }

    /// Uniform(-k, k) with k = 1/sqrt(fan_in).
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Self {
        let mut p = Parameter::zeros(name, shape);
        let k = 1.0 / (fan_in as f64).sqrt();
        for x in p.value.data_mut() {
            *x = F::lit(rng.gen_range(-k..k));
        }
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Anything that owns parameters.
pub trait Module<F: Real> {
    fn params(&self) -> Vec<&Parameter<F>>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<F>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Overwrites every parameter value to zero (used by tests and the
    /// zero-network fixed point checks).
    fn zero_values(&mut self) {
        for p in self.params_mut() {
            p.value.fill(F::zero());
        }
    }

    /// Scales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self
            .params()
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt();
        if norm > max_norm && norm > 0.0 {
            let s = F::lit(max_norm / norm);
            for p in self.params_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }
}
