//! Central finite-difference verification of analytic gradients.

use super::param::Module;
use crate::error::Result;

/// What the objective closure must compute on a given call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Loss only; gradients untouched.
    Loss,
    /// Zero the gradients, then loss plus full backward.
    LossAndGrad,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Probe at most this many entries per parameter (evenly strided).
    pub max_probes: Option<usize>,
    /// Entries whose gradient magnitude is below this are left out of
    /// [`ParamCheck::max_rel_error_resolved`].
    pub resolve_below: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            max_probes: None,
            resolve_below: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub probed: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub max_abs_error: f64,
    /// Same as `max_rel_error` but over entries with `|g| >= resolve_below`
    /// only, where finite-difference rounding noise cannot dominate.
    pub max_rel_error_resolved: f64,
    /// A non-finite loss or gradient was hit while probing this parameter.
    pub non_finite: bool,
}

impl ParamCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        !self.non_finite && self.max_rel_error < tolerance
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    /// Objective value at the probe point.
    pub loss: f64,
    /// Rough size of the rounding error in a central difference,
    /// `eps * |loss| / step`.
    pub noise_floor: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed(self.tolerance))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed(self.tolerance))
    }

    /// Verdict ignoring entries too small to resolve by finite differences.
    pub fn passed_resolved(&self) -> bool {
        self.params
            .iter()
            .all(|p| !p.non_finite && p.max_rel_error_resolved < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of every parameter of `model` against
/// central differences of `objective`.
pub fn grad_check<M, O>(model: &mut M, mut objective: O, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    M: Module<f64>,
    O: FnMut(&mut M, Pass) -> Result<f64>,
{
    let loss = objective(model, Pass::LossAndGrad)?;
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut report = GradCheckReport {
        tolerance: cfg.tolerance,
        loss,
        noise_floor: f64::EPSILON * loss.abs() / cfg.step,
        params: Vec::with_capacity(analytic.len()),
    };
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let stride = cfg.max_probes.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        let name = model.params()[pi].name.clone();
        let mut check = ParamCheck {
            name,
            probed: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            max_abs_error: 0.0,
            max_rel_error_resolved: 0.0,
            non_finite: false,
        };
        for idx in (0..n).step_by(stride) {
            let original = model.params()[pi].value.data()[idx];
            set_value(model, pi, idx, original + cfg.step);
            let plus = objective(model, Pass::Loss)?;
            set_value(model, pi, idx, original - cfg.step);
            let minus = objective(model, Pass::Loss)?;
            set_value(model, pi, idx, original);

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grads[idx];
            check.probed += 1;
            if !numeric.is_finite() || !a.is_finite() {
                check.non_finite = true;
                check.worst_index = idx;
                check.analytic = a;
                check.numeric = numeric;
                continue;
            }
            let err = relative_error(a, numeric);
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            if a.abs().max(numeric.abs()) >= cfg.resolve_below {
                check.max_rel_error_resolved = check.max_rel_error_resolved.max(err);
            }
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = idx;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

fn set_value<M: Module<f64>>(model: &mut M, param: usize, idx: usize, v: f64) {
    model.params_mut()[param].value.data_mut()[idx] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::{cross_entropy_logits, dense, dense_backward, relu, relu_backward};
    use crate::nn::param::Parameter;
    use crate::nn::tensor::Tensor;

    /// dense -> relu -> dense -> softmax CE, with an optional deliberately
    /// wrong backward.
    struct Toy {
        w1: Parameter<f64>,
        b1: Parameter<f64>,
        w2: Parameter<f64>,
        corrupt: bool,
    }

    impl Module<f64> for Toy {
        fn params(&self) -> Vec<&Parameter<f64>> {
            vec![&self.w1, &self.b1, &self.w2]
        }
        fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
            vec![&mut self.w1, &mut self.b1, &mut self.w2]
        }
    }

    fn toy(corrupt: bool) -> Toy {
        let mut rng = crate::rng::substream(11, "toy");
        let mut t = Toy {
            w1: Parameter::uniform("w1", &[3, 5], 3, &mut rng),
            b1: Parameter::uniform("b1", &[5], 1, &mut rng),
            w2: Parameter::uniform("w2", &[5, 4], 5, &mut rng),
            corrupt,
        };
        // keep every hidden pre-activation well away from the ReLU kink
        let x = [0.7, -0.3, 0.9];
        let pre = dense(&t.w1.value, &x, Some(t.b1.value.data())).unwrap();
        for (b, p) in t.b1.value.data_mut().iter_mut().zip(pre) {
            if p.abs() < 0.05 {
                *b += 0.1;
            }
        }
        t
    }

    fn objective(m: &mut Toy, pass: Pass) -> Result<f64> {
        let x = [0.7, -0.3, 0.9];
        let pre = dense(&m.w1.value, &x, Some(m.b1.value.data()))?;
        let hidden = relu(&pre);
        let z = dense(&m.w2.value, &hidden, None)?;
        let (loss, dz) = cross_entropy_logits(&z, 2);
        if pass == Pass::LossAndGrad {
            m.zero_grad();
            let dh = dense_backward(&m.w2.value, &hidden, &dz, &mut m.w2.grad);
            let mut dpre = relu_backward(&pre, &dh);
            if m.corrupt {
                dpre.iter_mut().for_each(|d| *d *= 1.5);
            }
            for (g, d) in m.b1.grad.data_mut().iter_mut().zip(&dpre) {
                *g += d;
            }
            dense_backward(&m.w1.value, &x, &dpre, &mut m.w1.grad);
        }
        Ok(loss)
    }

    #[test]
    fn dense_relu_softmax_toy_passes() {
        let mut m = toy(false);
        let cfg = GradCheckConfig {
            tolerance: 1e-6,
            ..Default::default()
        };
        let report = grad_check(&mut m, objective, &cfg).unwrap();
        assert!(report.passed(), "{:?}", report.params);
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let mut m = toy(true);
        let report = grad_check(&mut m, objective, &GradCheckConfig::default()).unwrap();
        assert!(!report.passed());
        let failed: Vec<_> = report.failures().map(|p| p.name.as_str()).collect();
        assert!(failed.contains(&"w1") && failed.contains(&"b1"), "{failed:?}");
    }

    #[test]
    fn sum_loss_has_unit_gradient_and_unused_param_zero() {
        struct Sum {
            a: Parameter<f64>,
            unused: Parameter<f64>,
        }
        impl Module<f64> for Sum {
            fn params(&self) -> Vec<&Parameter<f64>> {
                vec![&self.a, &self.unused]
            }
            fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
                vec![&mut self.a, &mut self.unused]
            }
        }
        let mut m = Sum {
            a: Parameter::zeros("a", &[3]),
            unused: Parameter::zeros("unused", &[2]),
        };
        m.a.value = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let report = grad_check(
            &mut m,
            |m, pass| {
                if pass == Pass::LossAndGrad {
                    m.zero_grad();
                    m.a.grad.fill(1.0);
                }
                Ok(m.a.value.data().iter().sum())
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(m.a.grad.data(), &[1.0; 3]);
        assert_eq!(m.unused.grad.data(), &[0.0; 2]);
    }

    #[test]
    fn nan_loss_is_reported_not_skipped() {
        struct One {
            a: Parameter<f64>,
        }
        impl Module<f64> for One {
            fn params(&self) -> Vec<&Parameter<f64>> {
                vec![&self.a]
            }
            fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
                vec![&mut self.a]
            }
        }
        let mut m = One {
            a: Parameter::zeros("a", &[1]),
        };
        let report = grad_check(
            &mut m,
            |m, _| Ok((m.a.value.data()[0] - 1e-5).ln()),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.params[0].non_finite);
        assert!(!report.passed());
    }
}
