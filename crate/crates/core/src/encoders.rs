//! Bidirectional LSTM encoders for the speech frames and the transcript
//! tokens. Position `i` of the output pairs the forward state after inputs
//! `1..=i` with the backward state after inputs `N..=i`.

use crate::error::{shape_err, Result};
use crate::nn::{Lstm, LstmTrace, Module, Parameter, Real, Tensor};
use crate::rng::Rng;

/// Per-position encoder states, `T × 2H`. Rows at or past `valid_len` are
/// padding and hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSequence<F> {
    pub values: Tensor<F>,
    pub valid_len: usize,
}

impl<F: Real> HiddenSequence<F> {
    pub fn new(values: Tensor<F>, valid_len: usize) -> Result<Self> {
        if valid_len > values.rows() {
            return Err(shape_err!("valid_len {} exceeds {} rows", valid_len, values.rows()));
        }
        Ok(HiddenSequence { values, valid_len })
    }

    /// All rows valid.
    pub fn full(values: Tensor<F>) -> Self {
        let valid_len = values.rows();
        HiddenSequence { values, valid_len }
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[F] {
        self.values.row(i)
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm<F> {
    pub fwd: Lstm<F>,
    pub bwd: Lstm<F>,
}

#[derive(Debug, Clone)]
pub struct BiLstmTrace<F> {
    fwd: LstmTrace<F>,
    bwd: LstmTrace<F>,
}

impl<F: Real> BiLstm<F> {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiLstm {
            fwd: Lstm::new(&format!("{prefix}.fwd"), input_dim, hidden, rng),
            bwd: Lstm::new(&format!("{prefix}.bwd"), input_dim, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim()
    }

    /// Encodes the first `valid_len` rows of `x`; the output keeps the row
    /// count of `x` with zero padding rows.
    pub fn forward(&self, x: &Tensor<F>, valid_len: usize) -> Result<(HiddenSequence<F>, BiLstmTrace<F>)> {
        let fwd = self.fwd.forward(x, valid_len, false)?;
        let bwd = self.bwd.forward(x, valid_len, true)?;
        let h = self.hidden();
        let mut values = Tensor::zeros(&[x.rows(), 2 * h]);
        for i in 0..valid_len {
            let row = values.row_mut(i);
            row[..h].copy_from_slice(fwd.hidden.row(i));
            row[h..].copy_from_slice(bwd.hidden.row(valid_len - 1 - i));
        }
        Ok((HiddenSequence { values, valid_len }, BiLstmTrace { fwd, bwd }))
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor<F>, trace: &BiLstmTrace<F>, d_out: &Tensor<F>) -> Tensor<F> {
        let h = self.hidden();
        let n = trace.fwd.len;
        let mut d_fwd = Tensor::zeros(&[n, h]);
        let mut d_bwd = Tensor::zeros(&[n, h]);
        for i in 0..n {
            let g = d_out.row(i);
            d_fwd.row_mut(i).copy_from_slice(&g[..h]);
            d_bwd.row_mut(n - 1 - i).copy_from_slice(&g[h..]);
        }
        let mut dx = self.fwd.backward(x, &trace.fwd, &d_fwd);
        let dx_b = self.bwd.backward(x, &trace.bwd, &d_bwd);
        for (a, b) in dx.data_mut().iter_mut().zip(dx_b.data()) {
            *a += *b;
        }
        dx
    }
}

impl<F: Real> Module<F> for BiLstm<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut p = self.fwd.params();
        p.extend(self.bwd.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut p = self.fwd.params_mut();
        p.extend(self.bwd.params_mut());
        p
    }
}

/// BiLSTM over per-frame acoustic features (`D = 34`).
pub fn encode_speech<F: Real>(encoder: &BiLstm<F>, features: &Tensor<F>) -> Result<HiddenSequence<F>> {
    Ok(encoder.forward(features, features.rows())?.0)
}

/// BiLSTM over token embeddings.
pub fn encode_text<F: Real>(encoder: &BiLstm<F>, embeddings: &Tensor<F>) -> Result<HiddenSequence<F>> {
    Ok(encoder.forward(embeddings, embeddings.rows())?.0)
}
