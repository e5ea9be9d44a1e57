use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{DspError, Waveform};

/// Reads mono 16-bit PCM; samples are scaled by 1/32768.
pub fn read_wav_pcm16(path: impl AsRef<Path>) -> Result<Waveform, DspError> {
    let reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DspError::UnsupportedAudio(format!(
            "{}: expected 1 channel, found {}",
            path.as_ref().display(),
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::UnsupportedAudio(format!(
            "{}: expected 16-bit integer PCM, found {}-bit {:?}",
            path.as_ref().display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM, clamping to [-1, 1] and scaling by 32767.
pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &Waveform) -> Result<(), DspError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for s in &w.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
