//! Acoustic front end: framing, spectra and the 34-dimensional short-term
//! feature set computed per frame.

mod features;
mod mfcc;
mod spectrum;
pub mod wav;

pub use features::{extract_features, FeatureSequence, FEATURE_DIM, FEATURE_NAMES};
pub use mfcc::{mel_filterbank, mfcc, MFCC_COEFFS, MFCC_FILTERS};
pub use spectrum::{hamming, magnitude_spectrum, SpectrumAnalyzer};

use crate::error::{invalid, Result};

/// Floor added before every log and division in the feature code.
pub const EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid!("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(invalid!("sample {i} is not finite"));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Analysis window and hop, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            window_ms: 20.0,
            hop_ms: 10.0,
        }
    }
}

impl FrameSpec {
    pub fn new(window_ms: f64, hop_ms: f64) -> Result<Self> {
        let spec = FrameSpec { window_ms, hop_ms };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.window_ms) {
            return Err(invalid!(
                "frame spec needs 0 < hop <= window, got window {} ms, hop {} ms",
                self.window_ms,
                self.hop_ms
            ));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * f64::from(sample_rate) / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * f64::from(sample_rate) / 1000.0).round() as usize
    }

    /// `floor((len - W) / hop) + 1`, or `None` when the signal is shorter
    /// than one window.
    pub fn frame_count(&self, len: usize, sample_rate: u32) -> Option<usize> {
        let (w, hop) = (self.window_samples(sample_rate), self.hop_samples(sample_rate));
        (len >= w && w > 0 && hop > 0).then(|| (len - w) / hop + 1)
    }
}

/// Splits `audio` into overlapping windows. The tail remainder that does not
/// fill a window is dropped.
pub fn frame_signal<'a>(audio: &'a AudioBuffer, spec: &FrameSpec) -> Result<Vec<&'a [f64]>> {
    spec.validate()?;
    let sr = audio.sample_rate();
    let (w, hop) = (spec.window_samples(sr), spec.hop_samples(sr));
    if w == 0 || hop == 0 {
        return Err(invalid!("frame spec yields an empty window at {sr} Hz"));
    }
    let n = spec.frame_count(audio.samples.len(), sr).ok_or_else(|| {
        invalid!(
            "audio of {} samples is shorter than one {}-sample window",
            audio.samples.len(),
            w
        )
    })?;
    Ok((0..n).map(|i| &audio.samples[i * hop..i * hop + w]).collect())
}
