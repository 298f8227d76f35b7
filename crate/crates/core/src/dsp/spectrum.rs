use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Reusable FFT plan for one frame length.
pub struct SpectrumAnalyzer {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        SpectrumAnalyzer {
            len,
            fft,
            buf: vec![Complex::default(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `|DFT_k(frame)|` for `k in 0..floor(W/2)`.
    pub fn magnitude(&mut self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.len, "frame length differs from plan");
        for (b, &x) in self.buf.iter_mut().zip(frame) {
            *b = Complex::new(x, 0.0);
        }
        self.fft.process(&mut self.buf);
        self.buf[..self.len / 2].iter().map(|c| c.norm()).collect()
    }
}

/// Half-spectrum magnitudes of `frame`: bins `0..floor(W/2)`, DC included,
/// unnormalized.
///
/// # Panics
/// If the frame has fewer than two samples.
pub fn magnitude_spectrum(frame: &[f64]) -> Vec<f64> {
    assert!(frame.len() >= 2, "magnitude_spectrum needs at least 2 samples");
    SpectrumAnalyzer::new(frame.len()).magnitude(frame)
}
