//! Unidirectional LSTM with exact backpropagation through time.
//!
//! Gate blocks are stacked as `[input, forget, cell-candidate, output]` along
//! the `4H` axis of every weight. No peepholes.

use super::ops::sigmoid;
use super::param::{Module, Parameter};
use super::tensor::{axpy, dot, Real, Tensor};
use crate::error::{invalid, shape_err, Result};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct Lstm<F> {
    /// `4H × D`
    pub w_x: Parameter<F>,
    /// `4H × H`
    pub w_h: Parameter<F>,
    /// `4H`
    pub bias: Parameter<F>,
    input_dim: usize,
    hidden: usize,
}

/// Everything the backward pass needs from one forward run.
#[derive(Debug, Clone)]
pub struct LstmTrace<F> {
    pub reverse: bool,
    pub len: usize,
    /// Post-activation gates per processing step, `len × 4H`.
    gates: Vec<F>,
    /// Cell state per processing step, `len × H`.
    cell: Vec<F>,
    tanh_cell: Vec<F>,
    /// Hidden state per processing step, `len × H`.
    pub hidden: Tensor<F>,
}

impl<F: Real> LstmTrace<F> {
    /// Row of the input consumed at processing step `k`.
    pub fn source_row(&self, k: usize) -> usize {
        if self.reverse {
            self.len - 1 - k
        } else {
            k
        }
    }
}

impl<F: Real> Lstm<F> {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut bias = Parameter::zeros(format!("{prefix}.bias"), &[4 * hidden]);
        bias.value.data_mut()[hidden..2 * hidden].fill(F::one());
        Lstm {
            w_x: Parameter::uniform(format!("{prefix}.W_x"), &[4 * hidden, input_dim], input_dim, rng),
            w_h: Parameter::uniform(format!("{prefix}.W_h"), &[4 * hidden, hidden], hidden, rng),
            bias,
            input_dim,
            hidden,
        }
    }

    pub fn zeros(prefix: &str, input_dim: usize, hidden: usize) -> Self {
        Lstm {
            w_x: Parameter::zeros(format!("{prefix}.W_x"), &[4 * hidden, input_dim]),
            w_h: Parameter::zeros(format!("{prefix}.W_h"), &[4 * hidden, hidden]),
            bias: Parameter::zeros(format!("{prefix}.bias"), &[4 * hidden]),
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn step(&self, x: &[F], h_prev: &[F], c_prev: &[F], gates: &mut [F], c: &mut [F], tc: &mut [F], h: &mut [F]) {
        let hd = self.hidden;
        let b = self.bias.value.data();
        for (r, g) in gates.iter_mut().enumerate() {
            *g = dot(self.w_x.value.row(r), x) + dot(self.w_h.value.row(r), h_prev) + b[r];
        }
        for k in 0..hd {
            gates[k] = sigmoid(gates[k]);
            gates[hd + k] = sigmoid(gates[hd + k]);
            gates[2 * hd + k] = gates[2 * hd + k].tanh();
            gates[3 * hd + k] = sigmoid(gates[3 * hd + k]);
            c[k] = gates[hd + k] * c_prev[k] + gates[k] * gates[2 * hd + k];
            tc[k] = c[k].tanh();
            h[k] = gates[3 * hd + k] * tc[k];
        }
    }

    /// One recurrence step: `(h_t, c_t)` from `(x_t, h_{t-1}, c_{t-1})`.
    pub fn cell(&self, x: &[F], h_prev: &[F], c_prev: &[F]) -> Result<(Vec<F>, Vec<F>)> {
        let hd = self.hidden;
        if x.len() != self.input_dim || h_prev.len() != hd || c_prev.len() != hd {
            return Err(shape_err!(
                "lstm cell: x {} (want {}), h {} / c {} (want {})",
                x.len(),
                self.input_dim,
                h_prev.len(),
                c_prev.len(),
                hd
            ));
        }
        let mut gates = vec![F::zero(); 4 * hd];
        let (mut c, mut tc, mut h) = (vec![F::zero(); hd], vec![F::zero(); hd], vec![F::zero(); hd]);
        self.step(x, h_prev, c_prev, &mut gates, &mut c, &mut tc, &mut h);
        Ok((h, c))
    }

    /// Runs over the first `len` rows of `x` from a zero state. With
    /// `reverse`, rows are consumed last to first and step `k` of the output
    /// holds the state after consuming row `len - 1 - k`.
    pub fn forward(&self, x: &Tensor<F>, len: usize, reverse: bool) -> Result<LstmTrace<F>> {
        if len == 0 {
            return Err(invalid!("lstm: empty sequence"));
        }
        if x.shape().len() != 2 || x.cols() != self.input_dim || len > x.rows() {
            return Err(shape_err!(
                "lstm: input {:?} with len {} for input dim {}",
                x.shape(),
                len,
                self.input_dim
            ));
        }
        let hd = self.hidden;
        let mut trace = LstmTrace {
            reverse,
            len,
            gates: vec![F::zero(); len * 4 * hd],
            cell: vec![F::zero(); len * hd],
            tanh_cell: vec![F::zero(); len * hd],
            hidden: Tensor::zeros(&[len, hd]),
        };
        let zeros = vec![F::zero(); hd];
        let hidden = trace.hidden.data_mut();
        for k in 0..len {
            let row = if reverse { len - 1 - k } else { k };
            let (c_done, c_rest) = trace.cell.split_at_mut(k * hd);
            let (h_done, h_rest) = hidden.split_at_mut(k * hd);
            let (h_prev, c_prev) = if k == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&h_done[(k - 1) * hd..], &c_done[(k - 1) * hd..])
            };
            self.step(
                x.row(row),
                h_prev,
                c_prev,
                &mut trace.gates[k * 4 * hd..(k + 1) * 4 * hd],
                &mut c_rest[..hd],
                &mut trace.tanh_cell[k * hd..(k + 1) * hd],
                &mut h_rest[..hd],
            );
        }
        Ok(trace)
    }

    /// Backpropagates `d_hidden` (`len × H`, processing order) through the
    /// recurrence. Parameter gradients accumulate; the returned input
    /// gradient has the shape of `x`, indexed by original row.
    pub fn backward(&mut self, x: &Tensor<F>, trace: &LstmTrace<F>, d_hidden: &Tensor<F>) -> Tensor<F> {
        let hd = self.hidden;
        let mut dx = Tensor::zeros(x.shape());
        let mut dh_next = vec![F::zero(); hd];
        let mut dc_next = vec![F::zero(); hd];
        let mut da = vec![F::zero(); 4 * hd];
        let zeros = vec![F::zero(); hd];
        for k in (0..trace.len).rev() {
            let row = trace.source_row(k);
            let gates = &trace.gates[k * 4 * hd..(k + 1) * 4 * hd];
            let tc = &trace.tanh_cell[k * hd..(k + 1) * hd];
            let (h_prev, c_prev) = if k == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (trace.hidden.row(k - 1), &trace.cell[(k - 1) * hd..k * hd])
            };
            let dh_out = d_hidden.row(k);
            for j in 0..hd {
                let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                let dh = dh_out[j] + dh_next[j];
                let d_o = dh * tc[j];
                let dc = dc_next[j] + dh * o * (F::one() - tc[j] * tc[j]);
                da[j] = dc * g * i * (F::one() - i);
                da[hd + j] = dc * c_prev[j] * f * (F::one() - f);
                da[2 * hd + j] = dc * i * (F::one() - g * g);
                da[3 * hd + j] = d_o * o * (F::one() - o);
                dc_next[j] = dc * f;
            }
            let x_row = x.row(row);
            dh_next.fill(F::zero());
            let dx_row = dx.row_mut(row);
            let db = self.bias.grad.data_mut();
            for (r, &a) in da.iter().enumerate() {
                if a == F::zero() {
                    continue;
                }
                db[r] += a;
                axpy(a, x_row, self.w_x.grad.row_mut(r));
                axpy(a, h_prev, self.w_h.grad.row_mut(r));
                axpy(a, self.w_x.value.row(r), dx_row);
                axpy(a, self.w_h.value.row(r), &mut dh_next);
            }
        }
        dx
    }
}

impl<F: Real> Module<F> for Lstm<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.w_x, &self.w_h, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng as _;
        let mut rng = substream(seed, "input");
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[rows, cols], data).unwrap()
    }

    #[test]
    fn zero_params_stay_at_zero_fixed_point() {
        let lstm = Lstm::<f64>::zeros("l", 3, 2);
        let (h, c) = lstm.cell(&[0.4, -2.0, 7.0], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let lstm = Lstm::<f64>::new("l", 3, 2, &mut substream(0, "init"));
        assert_eq!(lstm.bias.value.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(lstm.w_x.name, "l.W_x");
    }

    #[test]
    fn cell_rejects_bad_dims() {
        let lstm = Lstm::<f64>::zeros("l", 3, 2);
        assert!(lstm.cell(&[0.0; 2], &[0.0; 2], &[0.0; 2]).is_err());
        assert!(lstm.cell(&[0.0; 3], &[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn forward_rejects_empty() {
        let lstm = Lstm::<f64>::zeros("l", 3, 2);
        assert!(lstm.forward(&Tensor::zeros(&[4, 3]), 0, false).is_err());
        assert!(lstm.forward(&Tensor::zeros(&[4, 2]), 2, false).is_err());
    }

    #[test]
    fn forward_equals_cell_chain_exactly() {
        let lstm = Lstm::<f64>::new("l", 4, 3, &mut substream(3, "init"));
        let x = random_input(5, 4, 9);
        for reverse in [false, true] {
            let trace = lstm.forward(&x, 5, reverse).unwrap();
            let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
            for k in 0..5 {
                let row = if reverse { 4 - k } else { k };
                (h, c) = lstm.cell(x.row(row), &h, &c).unwrap();
                assert_eq!(trace.hidden.row(k), &h[..]);
            }
        }
    }

    #[test]
    fn single_step_is_direction_independent() {
        let lstm = Lstm::<f64>::new("l", 4, 3, &mut substream(3, "init"));
        let x = random_input(1, 4, 1);
        let a = lstm.forward(&x, 1, false).unwrap();
        let b = lstm.forward(&x, 1, true).unwrap();
        assert_eq!(a.hidden, b.hidden);
    }

    #[test]
    fn reverse_equals_forward_on_reversed_rows() {
        let lstm = Lstm::<f64>::new("l", 4, 3, &mut substream(5, "init"));
        let x = random_input(6, 4, 2);
        let rows: Vec<Vec<f64>> = (0..6).rev().map(|i| x.row(i).to_vec()).collect();
        let xr = Tensor::from_rows(&rows).unwrap();
        let a = lstm.forward(&x, 6, true).unwrap();
        let b = lstm.forward(&xr, 6, false).unwrap();
        assert_eq!(a.hidden, b.hidden);
    }

    #[test]
    fn rows_past_len_are_ignored() {
        let lstm = Lstm::<f64>::new("l", 4, 3, &mut substream(5, "init"));
        let mut x = random_input(6, 4, 2);
        let a = lstm.forward(&x, 4, true).unwrap();
        x.row_mut(5).fill(100.0);
        let b = lstm.forward(&x, 4, true).unwrap();
        assert_eq!(a.hidden, b.hidden);
    }
}
