use std::io::Write;

use super::mfcc::{MelBank, MFCC_COEFFS};
use super::spectrum::{hamming, SpectrumAnalyzer};
use super::{frame_signal, AudioBuffer, FrameSpec, EPS};
use crate::error::{invalid, Result};
use crate::nn::Tensor;

pub const FEATURE_DIM: usize = 34;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "zcr",
    "energy",
    "energy_entropy",
    "spectral_centroid",
    "spectral_spread",
    "spectral_entropy",
    "spectral_flux",
    "spectral_rolloff",
    "mfcc_1",
    "mfcc_2",
    "mfcc_3",
    "mfcc_4",
    "mfcc_5",
    "mfcc_6",
    "mfcc_7",
    "mfcc_8",
    "mfcc_9",
    "mfcc_10",
    "mfcc_11",
    "mfcc_12",
    "mfcc_13",
    "chroma_1",
    "chroma_2",
    "chroma_3",
    "chroma_4",
    "chroma_5",
    "chroma_6",
    "chroma_7",
    "chroma_8",
    "chroma_9",
    "chroma_10",
    "chroma_11",
    "chroma_12",
    "chroma_std",
];

const ENTROPY_BLOCKS: usize = 10;
const ROLLOFF: f64 = 0.90;
const MFCC_COL: usize = 8;
const CHROMA_COL: usize = MFCC_COL + MFCC_COEFFS;

/// Per-frame features of one utterance, `N × 34`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub values: Tensor<f64>,
    pub frame_spec: FrameSpec,
    pub sample_rate: u32,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.frames()).map(|i| self.values.at(i, c)).collect()
    }

    /// Zero mean, unit variance per column over this utterance. Columns that
    /// are constant up to rounding map to zero.
    pub fn standardized(&self) -> Tensor<f64> {
        let (n, d) = (self.frames(), FEATURE_DIM);
        let mut out = self.values.clone();
        for c in 0..d {
            let col = self.column(c);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            let constant = std <= 1e-9 * mean.abs().max(1.0);
            for (i, v) in col.iter().enumerate() {
                out.row_mut(i)[c] = if constant { 0.0 } else { (v - mean) / (std + EPS) };
            }
        }
        out
    }

    /// CSV with a header row naming each feature.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", FEATURE_NAMES.join(","))?;
        for i in 0..self.frames() {
            let row: Vec<String> = self.values.row(i).iter().map(|v| format!("{v:.9e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `Σ p log2 p` over `ENTROPY_BLOCKS` equal sub-blocks of `x²`, normalized by
/// the total energy of `x`.
fn block_entropy(x: &[f64]) -> f64 {
    let total: f64 = x.iter().map(|v| v * v).sum();
    let block = x.len() / ENTROPY_BLOCKS;
    if block == 0 {
        return 0.0;
    }
    x[..block * ENTROPY_BLOCKS]
        .chunks_exact(block)
        .map(|b| {
            let p = b.iter().map(|v| v * v).sum::<f64>() / (total + EPS);
            -p * (p + EPS).log2()
        })
        .sum()
}

/// Sign changes per sample pair, halved so a signal alternating every sample
/// scores 0.5 (its frequency in cycles per sample).
fn zero_crossing_rate(frame: &[f64]) -> f64 {
    let sign = |v: f64| -> f64 {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let crossings: f64 = frame.windows(2).map(|p| (sign(p[1]) - sign(p[0])).abs() / 2.0).sum();
    crossings / (2.0 * (frame.len() - 1).max(1) as f64)
}

fn pitch_class(freq: f64) -> usize {
    (12.0 * (freq / 27.5).log2()).round().rem_euclid(12.0) as usize
}

struct Extractor {
    sample_rate: u32,
    window: Vec<f64>,
    fft: SpectrumAnalyzer,
    mel: MelBank,
    /// Frequency of each half-spectrum bin, Hz.
    freqs: Vec<f64>,
    chroma_of_bin: Vec<Option<usize>>,
}

impl Extractor {
    fn new(frame_len: usize, sample_rate: u32) -> Self {
        let n_bins = frame_len / 2;
        let freqs: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * f64::from(sample_rate) / frame_len as f64)
            .collect();
        Extractor {
            sample_rate,
            window: hamming(frame_len),
            fft: SpectrumAnalyzer::new(frame_len),
            mel: MelBank::new(n_bins, sample_rate),
            chroma_of_bin: freqs.iter().map(|&f| (f > 0.0).then(|| pitch_class(f))).collect(),
            freqs,
        }
    }

    fn frame(&mut self, frame: &[f64], prev_mag: Option<&[f64]>, out: &mut [f64]) -> Vec<f64> {
        let w = frame.len();
        out[0] = zero_crossing_rate(frame);
        out[1] = frame.iter().map(|v| v * v).sum::<f64>() / w as f64;
        out[2] = block_entropy(frame);

        let windowed: Vec<f64> = frame.iter().zip(&self.window).map(|(x, h)| x * h).collect();
        let n_bins = w / 2;
        let mag: Vec<f64> = self
            .fft
            .magnitude(&windowed)
            .into_iter()
            .map(|m| m / n_bins as f64)
            .collect();
        let nyquist = f64::from(self.sample_rate) / 2.0;

        // centroid and spread on the max-normalized magnitude
        let peak = mag.iter().copied().fold(0.0, f64::max);
        let norm: Vec<f64> = mag.iter().map(|m| m / if peak > 0.0 { peak } else { EPS }).collect();
        let den = norm.iter().sum::<f64>() + EPS;
        let centroid = self.freqs.iter().zip(&norm).map(|(f, m)| f * m).sum::<f64>() / den;
        let spread = (self
            .freqs
            .iter()
            .zip(&norm)
            .map(|(f, m)| (f - centroid).powi(2) * m)
            .sum::<f64>()
            / den)
            .sqrt();
        out[3] = centroid / nyquist;
        out[4] = spread / nyquist;
        out[5] = block_entropy(&mag);

        let sum = mag.iter().sum::<f64>() + EPS;
        out[6] = match prev_mag {
            Some(prev) => {
                let prev_sum = prev.iter().sum::<f64>() + EPS;
                mag.iter().zip(prev).map(|(a, b)| (a / sum - b / prev_sum).powi(2)).sum()
            }
            None => 0.0,
        };

        let power: Vec<f64> = mag.iter().map(|m| m * m).collect();
        let energy: f64 = power.iter().sum();
        let mut cumulative = 0.0;
        out[7] = power
            .iter()
            .position(|p| {
                cumulative += p;
                cumulative + EPS > ROLLOFF * energy
            })
            .map_or(0.0, |k| k as f64 / n_bins as f64);

        out[MFCC_COL..CHROMA_COL].copy_from_slice(&self.mel.apply(&power));

        let mut chroma = [0.0; 12];
        let mut chroma_total = 0.0;
        for (p, class) in power.iter().zip(&self.chroma_of_bin) {
            if let Some(c) = class {
                chroma[*c] += p;
                chroma_total += p;
            }
        }
        for (dst, c) in out[CHROMA_COL..CHROMA_COL + 12].iter_mut().zip(chroma) {
            *dst = c / (chroma_total + EPS);
        }
        let chroma = &out[CHROMA_COL..CHROMA_COL + 12];
        let mean = chroma.iter().sum::<f64>() / 12.0;
        out[FEATURE_DIM - 1] = (chroma.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 12.0).sqrt();
        mag
    }
}

/// Frames `audio` and computes the 34 short-term features per frame.
pub fn extract_features(audio: &AudioBuffer, spec: &FrameSpec) -> Result<FeatureSequence> {
    let frames = frame_signal(audio, spec)?;
    let w = frames[0].len();
    if w < 2 {
        return Err(invalid!("window of {w} samples is too short for spectral features"));
    }
    let mut ex = Extractor::new(w, audio.sample_rate());
    let mut values = Tensor::zeros(&[frames.len(), FEATURE_DIM]);
    let mut prev: Option<Vec<f64>> = None;
    for (i, frame) in frames.iter().enumerate() {
        let mag = ex.frame(frame, prev.as_deref(), values.row_mut(i));
        prev = Some(mag);
    }
    Ok(FeatureSequence {
        values,
        frame_spec: *spec,
        sample_rate: audio.sample_rate(),
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn tone(freq: f64, sr: u32, len: usize, amp: f64) -> AudioBuffer {
        let s = (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / f64::from(sr)).sin())
            .collect();
        AudioBuffer::new(s, sr).unwrap()
    }

    #[test]
    fn constant_signal_has_zero_zcr() {
        let a = AudioBuffer::new(vec![0.3; 1600], 16000).unwrap();
        let f = extract_features(&a, &FrameSpec::default()).unwrap();
        assert!(f.column(0).iter().all(|&z| z == 0.0));
    }

    #[test]
    fn alternating_signal_zcr_matches_sign_change_count() {
        let s: Vec<f64> = (0..1600).map(|n| if n % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let a = AudioBuffer::new(s.clone(), 16000).unwrap();
        let f = extract_features(&a, &FrameSpec::default()).unwrap();
        // independent count: sign changes between neighbours, per pair, halved
        let frame = &s[..320];
        let changes = frame.windows(2).filter(|p| (p[0] > 0.0) != (p[1] > 0.0)).count();
        let oracle = changes as f64 / (2.0 * 319.0);
        for z in f.column(0) {
            assert!((z - oracle).abs() < 1e-12);
            assert!((z - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_produces_finite_features() {
        let a = AudioBuffer::new(vec![0.0; 3200], 16000).unwrap();
        let f = extract_features(&a, &FrameSpec::default()).unwrap();
        assert!(f.values.is_finite());
        assert!(f.standardized().is_finite());
    }

    #[test]
    fn energy_of_full_scale_sine_is_half() {
        let a = tone(1000.0, 16000, 3200, 1.0);
        let f = extract_features(&a, &FrameSpec::default()).unwrap();
        for e in f.column(1) {
            assert!((e - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn chroma_of_a440_lands_on_class_zero() {
        let a = tone(440.0, 16000, 3200, 0.5);
        let f = extract_features(&a, &FrameSpec::default()).unwrap();
        let chroma: Vec<f64> = (CHROMA_COL..CHROMA_COL + 12).map(|c| f.values.at(3, c)).collect();
        let best = chroma.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 0);
        assert!((chroma.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance() {
        let s: Vec<f64> = (0..4800)
            .map(|n| ((n as f64) * 0.07).sin() * (1.0 + (n as f64 / 900.0).sin()) * 0.3)
            .collect();
        let f = extract_features(&AudioBuffer::new(s, 16000).unwrap(), &FrameSpec::default()).unwrap();
        let z = f.standardized();
        for c in 0..FEATURE_DIM {
            let col: Vec<f64> = (0..z.rows()).map(|i| z.at(i, c)).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9, "column {c} mean {mean}");
            assert!(var < 1.0 + 1e-6, "column {c} var {var}");
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_frame() {
        let a = tone(300.0, 16000, 16000, 0.5);
        let f = extract_features(&a, &FrameSpec::default()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 100);
        assert!(lines[0].starts_with("zcr,energy,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 34));
    }
}
