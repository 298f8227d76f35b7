//! Stateless differentiable primitives used by the classifier head and the
//! pooling layers. Each forward has a matching backward that takes the
//! upstream gradient and returns (or accumulates) input gradients.

use super::tensor::{dot, Real, Tensor};
use crate::error::{invalid, shape_err, Result};

/// `y = Wᵀx (+ b)` with `W` stored as `in × out`.
pub fn dense<F: Real>(w: &Tensor<F>, x: &[F], bias: Option<&[F]>) -> Result<Vec<F>> {
    let (n_in, n_out) = (w.rows(), w.cols());
    if x.len() != n_in {
        return Err(shape_err!("dense: input {} vs weight rows {}", x.len(), n_in));
    }
    let mut y = match bias {
        Some(b) if b.len() != n_out => {
            return Err(shape_err!("dense: bias {} vs outputs {}", b.len(), n_out))
        }
        Some(b) => b.to_vec(),
        None => vec![F::zero(); n_out],
    };
    for (i, &xi) in x.iter().enumerate() {
        for (yk, &wik) in y.iter_mut().zip(w.row(i)) {
            *yk += wik * xi;
        }
    }
    Ok(y)
}

/// Accumulates `dW` and returns `dx` for [`dense`].
pub fn dense_backward<F: Real>(w: &Tensor<F>, x: &[F], dy: &[F], dw: &mut Tensor<F>) -> Vec<F> {
    let mut dx = vec![F::zero(); x.len()];
    for (i, &xi) in x.iter().enumerate() {
        for (dwik, &dyk) in dw.row_mut(i).iter_mut().zip(dy) {
            *dwik += xi * dyk;
        }
        dx[i] = dot(w.row(i), dy);
    }
    dx
}

pub fn relu<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| v.max(F::zero())).collect()
}

/// Gradient passes where the input was strictly positive.
pub fn relu_backward<F: Real>(x: &[F], dy: &[F]) -> Vec<F> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| if v > F::zero() { d } else { F::zero() })
        .collect()
}

pub fn tanh_op<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Takes the tanh *output*.
pub fn tanh_backward<F: Real>(y: &[F], dy: &[F]) -> Vec<F> {
    y.iter().zip(dy).map(|(&t, &d)| d * (F::one() - t * t)).collect()
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn log_sum_exp<F: Real>(x: &[F]) -> F {
    let m = x.iter().copied().fold(F::neg_infinity(), F::max);
    m + x.iter().map(|&v| (v - m).exp()).sum::<F>().ln()
}

/// Max-shifted softmax.
pub fn softmax<F: Real>(x: &[F]) -> Vec<F> {
    let m = x.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: F = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Given softmax output `p` and `dL/dp`, returns `dL/dx`.
pub fn softmax_backward<F: Real>(p: &[F], dp: &[F]) -> Vec<F> {
    let inner: F = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
    p.iter().zip(dp).map(|(&a, &b)| a * (b - inner)).collect()
}

/// `-Σ y_c log p_c`.
pub fn cross_entropy<F: Real>(p: &[F], y_onehot: &[F]) -> F {
    p.iter()
        .zip(y_onehot)
        .filter(|(_, &y)| y != F::zero())
        .map(|(&pc, &y)| -y * pc.ln())
        .sum()
}

/// Cross entropy of a class target evaluated from logits via log-sum-exp.
/// Returns the loss and `dL/dlogits = softmax(z) - onehot`.
pub fn cross_entropy_logits<F: Real>(z: &[F], target: usize) -> (F, Vec<F>) {
    let loss = log_sum_exp(z) - z[target];
    let mut grad = softmax(z);
    grad[target] -= F::one();
    (loss, grad)
}

/// Entrywise max over the first `valid_len` rows of `seq`, plus the row that
/// supplied each maximum (first occurrence on ties).
pub fn max_pool_time<F: Real>(seq: &Tensor<F>, valid_len: usize) -> Result<(Vec<F>, Vec<usize>)> {
    if valid_len == 0 {
        return Err(invalid!("max_pool_time: valid_len must be at least 1"));
    }
    if valid_len > seq.rows() {
        return Err(shape_err!(
            "max_pool_time: valid_len {} exceeds {} rows",
            valid_len,
            seq.rows()
        ));
    }
    let mut out = seq.row(0).to_vec();
    let mut arg = vec![0; out.len()];
    for t in 1..valid_len {
        for (d, &v) in seq.row(t).iter().enumerate() {
            if v > out[d] {
                out[d] = v;
                arg[d] = t;
            }
        }
    }
    Ok((out, arg))
}

/// Routes `dy` to the winning rows of `d_seq`.
pub fn max_pool_time_backward<F: Real>(arg: &[usize], dy: &[F], d_seq: &mut Tensor<F>) {
    let c = d_seq.cols();
    let data = d_seq.data_mut();
    for (d, (&t, &g)) in arg.iter().zip(dy).enumerate() {
        data[t * c + d] += g;
    }
}
