use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{normalize_transcript, CorpusError};
use crate::config::CorpusConfig;
use crate::dsp::{mel_to_hz, Waveform};
use crate::seq2seq::Vocabulary;

const LOWEST_MEL: f64 = 283.0;
const MEL_STEP: f64 = 75.0;
/// Raised-cosine ramp at each motif edge.
const RAMP_MS: f64 = 5.0;
const PEAK: f64 = 0.9;

/// Fundamental of a symbol's motif: equally spaced on the Mel scale from about 200 Hz.
pub fn motif_frequency_hz(symbol: usize) -> f64 {
    mel_to_hz(LOWEST_MEL + MEL_STEP * symbol as f64)
}

/// Concatenates one fixed motif per symbol, adds seeded Gaussian noise at
/// `noise_db` below the tone power, and scales to a fixed peak.
pub fn synth_utterance(transcript: &str, seed: u64, sample_rate_hz: u32, cfg: &CorpusConfig) -> Result<Waveform, CorpusError> {
    if transcript.is_empty() {
        return Err(CorpusError::EmptyTranscript);
    }
    if normalize_transcript(transcript) != transcript {
        return Err(CorpusError::NotNormalized(transcript.to_string()));
    }
    let symbols = Vocabulary.encode(transcript).map_err(|_| CorpusError::NotNormalized(transcript.to_string()))?;
    let sr = sample_rate_hz as f64;
    let n = (cfg.motif_ms as u64 * sample_rate_hz as u64 / 1000) as usize;
    let ramp = ((RAMP_MS * sr / 1000.0) as usize).min(n / 2).max(1);
    let nyquist = sr / 2.0;
    let mut samples = Vec::with_capacity(n * symbols.len());
    for &s in &symbols {
        let f0 = motif_frequency_hz(s);
        for i in 0..n {
            let t = i as f64 / sr;
            let mut x = (2.0 * std::f64::consts::PI * f0 * t).sin();
            for (k, a) in cfg.harmonics.iter().enumerate() {
                let f = f0 * (k + 2) as f64;
                if f < nyquist {
                    x += a * (2.0 * std::f64::consts::PI * f * t).sin();
                }
            }
            let edge = i.min(n - 1 - i);
            if edge < ramp {
                x *= 0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos();
            }
            samples.push(x);
        }
    }
    let power = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
    let sigma = (power * 10f64.powf(cfg.noise_db / 10.0)).sqrt();
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        samples.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
    }
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|x| *x *= PEAK / peak);
    }
    Ok(Waveform::new(samples, sample_rate_hz))
}
