use std::f64::consts::PI;

use super::EPS;

pub const MFCC_FILTERS: usize = 26;
pub const MFCC_COEFFS: usize = 13;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters evenly spaced on the mel scale from 0 Hz to Nyquist,
/// evaluated at the centre frequencies of `n_bins` half-spectrum bins
/// (bin `k` sits at `k * sr / (2 * n_bins)`).
pub fn mel_filterbank(n_bins: usize, sample_rate: u32, n_filters: usize) -> Vec<Vec<f64>> {
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
        .collect();
    (0..n_filters)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * nyquist / n_bins as f64;
                    if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II coefficients `0..n_out` of `x`.
fn dct2_ortho(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = x.len() as f64;
    (0..n_out)
        .map(|n| {
            let scale = if n == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, &v)| v * (PI * n as f64 * (i as f64 + 0.5) / m).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Precomputed filterbank for repeated MFCC evaluation at one spectrum size.
pub(crate) struct MelBank {
    filters: Vec<Vec<f64>>,
}

impl MelBank {
    pub(crate) fn new(n_bins: usize, sample_rate: u32) -> Self {
        MelBank {
            filters: mel_filterbank(n_bins, sample_rate, MFCC_FILTERS),
        }
    }

    pub(crate) fn apply(&self, power: &[f64]) -> Vec<f64> {
        let log_energies: Vec<f64> = self
            .filters
            .iter()
            .map(|w| (w.iter().zip(power).map(|(a, b)| a * b).sum::<f64>() + EPS).ln())
            .collect();
        dct2_ortho(&log_energies, MFCC_COEFFS)
    }
}

/// 13 cepstral coefficients from a half-spectrum power vector: 26 mel
/// filters, natural log with an `EPS` floor, orthonormal DCT-II.
pub fn mfcc(power_spectrum: &[f64], sample_rate: u32) -> Vec<f64> {
    debug_assert!(power_spectrum.iter().all(|&p| p >= 0.0));
    MelBank::new(power_spectrum.len(), sample_rate).apply(power_spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silent_spectrum_gives_constant_log_energies() {
        let c = mfcc(&[0.0; 160], 16000);
        let expected_c0 = (MFCC_FILTERS as f64).sqrt() * EPS.ln();
        assert!((c[0] - expected_c0).abs() < 1e-9, "{} vs {}", c[0], expected_c0);
        for v in &c[1..] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn filters_are_triangles_that_reach_one() {
        let bank = mel_filterbank(512, 16000, 26);
        for f in &bank {
            let peak = f.iter().copied().fold(0.0, f64::max);
            assert!(peak > 0.5 && peak <= 1.0);
            assert!(f.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }
}
