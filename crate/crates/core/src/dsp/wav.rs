//! 16-bit PCM mono WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{invalid, Error, Result};

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(invalid!("{}: {} channels, only mono is supported", path.display(), spec.channels));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(invalid!(
            "{}: {}-bit {:?} samples, only 16-bit PCM is supported",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in audio.samples() {
        let q = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
