use super::param::Parameter;
use super::tensor::{Real, Tensor};
use crate::error::{shape_err, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Real> Default for Adam<F> {
    fn default() -> Self {
        Adam::new(0.001)
    }
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor<F>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<F>] {
        &self.v
    }

    /// Applies one update using the gradients currently stored in `params`.
    /// The parameter list must be presented in the same order every step.
    pub fn step(&mut self, mut params: Vec<&mut Parameter<F>>) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(shape_err!(
                "adam: tracking {} parameters, given {}",
                self.m.len(),
                params.len()
            ));
        }
        if let Some((p, _)) = params.iter().zip(&self.m).find(|(p, m)| p.value.shape() != m.shape()) {
            return Err(shape_err!("adam: shape of {} changed", p.name));
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let c1 = F::lit(1.0 - self.beta1.powi(t));
        let c2 = F::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (F::lit(self.lr), F::lit(self.eps));
        let one = F::one();
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grads: &[f64]) -> Parameter<f64> {
        let mut p = Parameter::zeros("p", &[values.len()]);
        p.value.data_mut().copy_from_slice(values);
        p.grad.data_mut().copy_from_slice(grads);
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, 7.0, -3.0] {
            let mut p = param(&[1.0, -2.0], &[g, g]);
            let mut adam = Adam::new(0.001);
            adam.step(vec![&mut p]).unwrap();
            for (after, before) in p.value.data().iter().zip([1.0, -2.0]) {
                let delta = (after - before).abs();
                assert!((0.000999..=0.001).contains(&delta), "g={g} delta={delta}");
            }
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = param(&[0.3, 0.4], &[0.0, 0.0]);
        let mut adam = Adam::new(0.001);
        for _ in 0..5 {
            adam.step(vec![&mut p]).unwrap();
        }
        assert_eq!(p.value.data(), &[0.3, 0.4]);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn two_constant_steps_match_hand_rolled_update() {
        let g = 0.25;
        let mut p = param(&[0.5], &[g]);
        let mut adam = Adam::new(0.001);
        adam.step(vec![&mut p]).unwrap();
        adam.step(vec![&mut p]).unwrap();

        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.001, 1e-8);
        let (mut m, mut v, mut w) = (0.0, 0.0, 0.5);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.value.data()[0] - w).abs() < 1e-12);
    }

    #[test]
    fn parameter_count_must_stay_fixed() {
        let mut a = param(&[0.0], &[1.0]);
        let mut b = param(&[0.0], &[1.0]);
        let mut adam = Adam::new(0.001);
        adam.step(vec![&mut a]).unwrap();
        assert!(adam.step(vec![&mut a, &mut b]).is_err());
    }
}
