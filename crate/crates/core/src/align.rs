//! Cross-modal alignment of speech frames to transcript words.
//!
//! [`attend`] scores every (word, frame) pair per head with
//! `tanh(u·s_i + v·h_j + b)` over that head's contiguous slice of the state
//! vector, normalizes over the valid frames, and pools the frame states into
//! one aligned vector per word. [`hard_align`] and [`concat_pool`] are the
//! two baselines that skip the learned alignment.

use std::cell::Cell;

use crate::encoders::HiddenSequence;
use crate::error::{invalid, shape_err, Result};
use crate::nn::ops::max_pool_time;
use crate::nn::tensor::{axpy, dot};
use crate::nn::{Module, Parameter, Real, Tensor};
use crate::rng::Rng;

/// Pre-softmax score given to padded frames.
pub const MASKED_LOGIT: f64 = -1e9;

thread_local! {
    static ATTEND_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`attend`] calls made on this thread so far.
pub fn attend_call_count() -> usize {
    ATTEND_CALLS.with(Cell::get)
}

/// Per-head scoring vectors. Head `k` owns state columns
/// `k*head_dim..(k+1)*head_dim`.
#[derive(Debug, Clone)]
pub struct AttentionParams<F> {
    /// `heads × head_dim`, applied to speech states.
    pub u: Parameter<F>,
    /// `heads × head_dim`, applied to text states.
    pub v: Parameter<F>,
    /// `heads`
    pub b: Parameter<F>,
}

impl<F: Real> AttentionParams<F> {
    pub fn new(prefix: &str, heads: usize, head_dim: usize, rng: &mut Rng) -> Self {
        AttentionParams {
            u: Parameter::uniform(format!("{prefix}.u"), &[heads, head_dim], head_dim, rng),
            v: Parameter::uniform(format!("{prefix}.v"), &[heads, head_dim], head_dim, rng),
            b: Parameter::zeros(format!("{prefix}.b"), &[heads]),
        }
    }

    pub fn heads(&self) -> usize {
        self.u.value.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.u.value.cols()
    }

    pub fn width(&self) -> usize {
        self.heads() * self.head_dim()
    }
}

impl<F: Real> Module<F> for AttentionParams<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.u, &self.v, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.u, &mut self.v, &mut self.b]
    }
}

/// `heads × M × N` alignment weights. Rows `j < text_valid` are
/// distributions over the first `frame_valid` frames; everything else is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap<F> {
    pub weights: Tensor<F>,
    pub frame_valid: usize,
    pub text_valid: usize,
}

impl<F: Real> AttentionMap<F> {
    pub fn heads(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn words(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Weights of head `head`, word `j` over all frames.
    pub fn row(&self, head: usize, j: usize) -> &[F] {
        let (m, n) = (self.words(), self.frames());
        let start = (head * m + j) * n;
        &self.weights.data()[start..start + n]
    }

    /// Per-word weights averaged over heads, valid words and frames only.
    pub fn head_average(&self) -> Vec<Vec<f64>> {
        let h = self.heads() as f64;
        (0..self.text_valid)
            .map(|j| {
                (0..self.frame_valid)
                    .map(|i| (0..self.heads()).map(|k| self.row(k, j)[i].as_f64()).sum::<f64>() / h)
                    .collect()
            })
            .collect()
    }
}

/// One aligned speech vector per word, `M × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSpeechSequence<F> {
    pub values: Tensor<F>,
    pub valid_len: usize,
}

#[derive(Debug, Clone)]
pub struct AttendTrace<F> {
    /// Post-tanh scores, same layout as the attention weights.
    scores: Tensor<F>,
    map: AttentionMap<F>,
}

fn check_width<F: Real>(params: &AttentionParams<F>, seq: &HiddenSequence<F>, what: &str) -> Result<()> {
    if seq.width() != params.width() {
        return Err(shape_err!(
            "{what} states are {} wide, attention expects {} heads x {}",
            seq.width(),
            params.heads(),
            params.head_dim()
        ));
    }
    Ok(())
}

/// Soft alignment of text positions (queries) to speech frames.
pub fn attend<F: Real>(
    params: &AttentionParams<F>,
    speech: &HiddenSequence<F>,
    text: &HiddenSequence<F>,
) -> Result<(AlignedSpeechSequence<F>, AttentionMap<F>, AttendTrace<F>)> {
    ATTEND_CALLS.with(|c| c.set(c.get() + 1));
    if speech.valid_len == 0 {
        return Err(invalid!("attend: no valid speech frames"));
    }
    if text.valid_len == 0 {
        return Err(invalid!("attend: no valid text positions"));
    }
    check_width(params, speech, "speech")?;
    check_width(params, text, "text")?;
    let (heads, dh) = (params.heads(), params.head_dim());
    let (m, n) = (text.values.rows(), speech.values.rows());
    let (nv, mv) = (speech.valid_len, text.valid_len);
    let mut scores = Tensor::zeros(&[heads, m, n]);
    let mut weights = Tensor::zeros(&[heads, m, n]);
    let mut aligned = Tensor::zeros(&[m, heads * dh]);

    // u·s_i per head and frame is shared by every word
    let speech_terms: Vec<Vec<F>> = (0..heads)
        .map(|k| {
            let u = params.u.value.row(k);
            (0..nv).map(|i| dot(u, &speech.row(i)[k * dh..(k + 1) * dh])).collect()
        })
        .collect();
    let masked = F::lit(MASKED_LOGIT);

    for k in 0..heads {
        let v = params.v.value.row(k);
        let b = params.b.value.data()[k];
        for j in 0..mv {
            let text_term = dot(v, &text.row(j)[k * dh..(k + 1) * dh]) + b;
            let base = (k * m + j) * n;
            let sc = &mut scores.data_mut()[base..base + n];
            for i in 0..nv {
                sc[i] = (speech_terms[k][i] + text_term).tanh();
            }
            let mut logits = sc.to_vec();
            logits[nv..].fill(masked);
            let mx = logits.iter().copied().fold(F::neg_infinity(), F::max);
            let w = &mut weights.data_mut()[base..base + n];
            let mut sum = F::zero();
            for (wi, &l) in w.iter_mut().zip(&logits) {
                *wi = (l - mx).exp();
                sum += *wi;
            }
            w.iter_mut().for_each(|x| *x /= sum);
            let out = &mut aligned.row_mut(j)[k * dh..(k + 1) * dh];
            for (i, &wi) in w[..nv].iter().enumerate() {
                axpy(wi, &speech.row(i)[k * dh..(k + 1) * dh], out);
            }
        }
    }
    let map = AttentionMap {
        weights,
        frame_valid: nv,
        text_valid: mv,
    };
    Ok((
        AlignedSpeechSequence {
            values: aligned,
            valid_len: mv,
        },
        map.clone(),
        AttendTrace { scores, map },
    ))
}

/// Backward of [`attend`]: accumulates parameter gradients and returns
/// `(dL/dspeech, dL/dtext)`.
pub fn attend_backward<F: Real>(
    params: &mut AttentionParams<F>,
    speech: &HiddenSequence<F>,
    text: &HiddenSequence<F>,
    trace: &AttendTrace<F>,
    d_aligned: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>) {
    let (heads, dh) = (params.heads(), params.head_dim());
    let (m, n) = (text.values.rows(), speech.values.rows());
    let (nv, mv) = (trace.map.frame_valid, trace.map.text_valid);
    let mut d_speech = Tensor::zeros(speech.values.shape());
    let mut d_text = Tensor::zeros(text.values.shape());
    let mut d_weight = vec![F::zero(); nv];
    for k in 0..heads {
        let cols = k * dh..(k + 1) * dh;
        for j in 0..mv {
            let base = (k * m + j) * n;
            let w = &trace.map.weights.data()[base..base + nv];
            let sc = &trace.scores.data()[base..base + nv];
            let g = &d_aligned.row(j)[cols.clone()];
            for i in 0..nv {
                d_weight[i] = dot(g, &speech.row(i)[cols.clone()]);
                axpy(w[i], g, &mut d_speech.row_mut(i)[cols.clone()]);
            }
            let inner: F = w.iter().zip(&d_weight).map(|(&a, &b)| a * b).sum();
            let mut d_text_term = F::zero();
            for i in 0..nv {
                let d_score = w[i] * (d_weight[i] - inner);
                let d_pre = d_score * (F::one() - sc[i] * sc[i]);
                if d_pre == F::zero() {
                    continue;
                }
                d_text_term += d_pre;
                axpy(d_pre, &speech.row(i)[cols.clone()], params.u.grad.row_mut(k));
                axpy(d_pre, params.u.value.row(k), &mut d_speech.row_mut(i)[cols.clone()]);
            }
            params.b.grad.data_mut()[k] += d_text_term;
            axpy(d_text_term, &text.row(j)[cols.clone()], params.v.grad.row_mut(k));
            axpy(d_text_term, params.v.value.row(k), &mut d_text.row_mut(j)[cols.clone()]);
        }
    }
    (d_speech, d_text)
}

/// Unweighted mean of the speech states inside each word's frame span.
/// Spans are 1-based and inclusive.
pub fn hard_align<F: Real>(speech: &HiddenSequence<F>, spans: &[(usize, usize)]) -> Result<AlignedSpeechSequence<F>> {
    let nv = speech.valid_len;
    for (j, &(start, end)) in spans.iter().enumerate() {
        if start == 0 || start > end || end > nv {
            return Err(invalid!(
                "word {j}: span ({start}, {end}) is empty or outside frames 1..={nv}"
            ));
        }
    }
    let mut values = Tensor::zeros(&[spans.len(), speech.width()]);
    for (j, &(start, end)) in spans.iter().enumerate() {
        let scale = F::one() / F::lit((end - start + 1) as f64);
        let out = values.row_mut(j);
        for i in start - 1..end {
            axpy(scale, speech.row(i), out);
        }
    }
    Ok(AlignedSpeechSequence {
        values,
        valid_len: spans.len(),
    })
}

pub fn hard_align_backward<F: Real>(speech: &HiddenSequence<F>, spans: &[(usize, usize)], d_aligned: &Tensor<F>) -> Tensor<F> {
    let mut d_speech = Tensor::zeros(speech.values.shape());
    for (j, &(start, end)) in spans.iter().enumerate() {
        let scale = F::one() / F::lit((end - start + 1) as f64);
        for i in start - 1..end {
            axpy(scale, d_aligned.row(j), d_speech.row_mut(i));
        }
    }
    d_speech
}

/// Winning rows of the two max-pools.
#[derive(Debug, Clone)]
pub struct ConcatTrace {
    speech_arg: Vec<usize>,
    text_arg: Vec<usize>,
}

/// `[maxpool(speech); maxpool(text)]` over valid positions.
pub fn concat_pool<F: Real>(speech: &HiddenSequence<F>, text: &HiddenSequence<F>) -> Result<(Vec<F>, ConcatTrace)> {
    let (mut out, speech_arg) = max_pool_time(&speech.values, speech.valid_len)?;
    let (t, text_arg) = max_pool_time(&text.values, text.valid_len)?;
    out.extend(t);
    Ok((out, ConcatTrace { speech_arg, text_arg }))
}

pub fn concat_pool_backward<F: Real>(
    speech: &HiddenSequence<F>,
    text: &HiddenSequence<F>,
    trace: &ConcatTrace,
    d_out: &[F],
) -> (Tensor<F>, Tensor<F>) {
    let ws = speech.width();
    let mut ds = Tensor::zeros(speech.values.shape());
    let mut dt = Tensor::zeros(text.values.shape());
    crate::nn::ops::max_pool_time_backward(&trace.speech_arg, &d_out[..ws], &mut ds);
    crate::nn::ops::max_pool_time_backward(&trace.text_arg, &d_out[ws..], &mut dt);
    (ds, dt)
}
