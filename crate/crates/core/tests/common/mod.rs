//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use crossalign::align::AttentionParams;
use crossalign::dsp::{MFCC_COEFFS, MFCC_FILTERS};
use crossalign::encoders::BiLstm;
use crossalign::nn::{Lstm, Tensor};
use crossalign::rng::Rng;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn naive_dft_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let phase = -2.0 * PI * (k * t % n) as f64 / n as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Mel filters built from the natural-log form of the mel scale and an
/// explicit DCT sum; shares no code with the library.
pub fn mfcc_oracle(power: &[f64], sr: u32) -> Vec<f64> {
    let mel = |f: f64| 1127.0 * (f / 700.0).ln_1p();
    let hz = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let nyq = sr as f64 / 2.0;
    let n_bins = power.len();
    let m_top = mel(nyq);
    let edge = |i: usize| hz(m_top * i as f64 / (MFCC_FILTERS + 1) as f64);
    let mut log_e = Vec::with_capacity(MFCC_FILTERS);
    for m in 1..=MFCC_FILTERS {
        let (a, c, b) = (edge(m - 1), edge(m), edge(m + 1));
        let mut e = 0.0;
        for (k, &p) in power.iter().enumerate() {
            let f = nyq * k as f64 / n_bins as f64;
            let w = if f > a && f <= c {
                (f - a) / (c - a)
            } else if f > c && f < b {
                (b - f) / (b - c)
            } else {
                0.0
            };
            e += w * p;
        }
        log_e.push((e + 1e-10).ln());
    }
    let m = MFCC_FILTERS as f64;
    (0..MFCC_COEFFS)
        .map(|n| {
            let s: f64 = log_e
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * n as f64 * (2.0 * i as f64 + 1.0) / (2.0 * m)).cos())
                .sum();
            s * if n == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() }
        })
        .collect()
}

pub fn noise(seed: u64, n: usize, amp: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-amp..amp)).collect()
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[rows, cols], data).unwrap()
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Chains the five gate equations cell by cell, reading weights entry by
/// entry.
pub fn lstm_oracle(lstm: &Lstm<f64>, x: &Tensor<f64>, len: usize, reverse: bool) -> Vec<Vec<f64>> {
    let h = lstm.hidden();
    let d = lstm.input_dim();
    let (wx, wh, b) = (&lstm.w_x.value, &lstm.w_h.value, lstm.bias.value.data());
    let mut hs = vec![0.0; h];
    let mut cs = vec![0.0; h];
    let mut out = vec![vec![]; len];
    for step in 0..len {
        let t = if reverse { len - 1 - step } else { step };
        let pre = |gate: usize, k: usize, hs: &[f64]| {
            let r = gate * h + k;
            let mut s = b[r];
            for c in 0..d {
                s += wx.at(r, c) * x.at(t, c);
            }
            for c in 0..h {
                s += wh.at(r, c) * hs[c];
            }
            s
        };
        let mut nh = vec![0.0; h];
        for k in 0..h {
            let i = sig(pre(0, k, &hs));
            let f = sig(pre(1, k, &hs));
            let g = pre(2, k, &hs).tanh();
            let o = sig(pre(3, k, &hs));
            cs[k] = f * cs[k] + i * g;
            nh[k] = o * cs[k].tanh();
        }
        hs = nh;
        out[t] = hs.clone();
    }
    out
}

pub fn bilstm_oracle(enc: &BiLstm<f64>, x: &Tensor<f64>, len: usize) -> Vec<Vec<f64>> {
    let f = lstm_oracle(&enc.fwd, x, len, false);
    let b = lstm_oracle(&enc.bwd, x, len, true);
    f.into_iter().zip(b).map(|(mut a, b)| {
        a.extend(b);
        a
    }).collect()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y}");
    }
}

/// Direct per-head score / softmax / weighted sum.
pub fn attend_oracle(p: &AttentionParams<f64>, s: &Tensor<f64>, nv: usize, t: &Tensor<f64>, mv: usize) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let (heads, dh) = (p.heads(), p.head_dim());
    let mut aligned = vec![vec![0.0; heads * dh]; mv];
    let mut weights = vec![vec![vec![0.0; nv]; mv]; heads];
    for k in 0..heads {
        for j in 0..mv {
            let e: Vec<f64> = (0..nv)
                .map(|i| {
                    let mut z = p.b.value.data()[k];
                    for c in 0..dh {
                        z += p.u.value.at(k, c) * s.at(i, k * dh + c) + p.v.value.at(k, c) * t.at(j, k * dh + c);
                    }
                    z.tanh()
                })
                .collect();
            let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = e.iter().map(|v| (v - mx).exp()).sum();
            for i in 0..nv {
                let a = (e[i] - mx).exp() / z;
                weights[k][j][i] = a;
                for c in 0..dh {
                    aligned[j][k * dh + c] += a * s.at(i, k * dh + c);
                }
            }
        }
    }
    (aligned, weights)
}
