//! Transcript normalization, the synthetic tone corpus, manifests, and
//! utterance preparation (framing plus spectral targets).

mod manifest;
mod synth;


use std::path::PathBuf;

pub use manifest::{build_corpus, read_manifest, write_manifest, Corpus, Manifest, Utterance};
pub use synth::{motif_frequency_hz, synth_utterance};

use crate::config::RunConfig;
use crate::dsp::{frame_signal, log_mel_spectrogram, mfcc, normalize_waveform, read_wav_pcm16, DspError, FrameMatrix, SpectralFeatures};
use crate::seq2seq::{Vocabulary, EOS, NOISE_TOKEN};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("empty transcript")]
    EmptyTranscript,
    #[error("transcript {0:?} is not normalized")]
    NotNormalized(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Audio { path: PathBuf, source: DspError },
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Lowercases, maps characters outside the 31 text symbols to `<noise>`,
/// turns whitespace runs into single spaces and trims the ends. A literal
/// `<noise>` is kept as the noise symbol.
pub fn normalize_transcript(raw: &str) -> String {
    let vocab = Vocabulary;
    let lower = raw.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    let mut pending_space = false;
    let mut rest = lower.as_str();
    while let Some(c) = rest.chars().next() {
        let (piece, used): (&str, usize) = if rest.starts_with(NOISE_TOKEN) {
            (NOISE_TOKEN, NOISE_TOKEN.len())
        } else if c.is_whitespace() {
            pending_space = true;
            rest = &rest[c.len_utf8()..];
            continue;
        } else if vocab.char_index(c).is_some() {
            (&rest[..c.len_utf8()], c.len_utf8())
        } else {
            (NOISE_TOKEN, c.len_utf8())
        };
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push_str(piece);
        rest = &rest[used..];
    }
    out
}

/// Vocabulary indices of a normalized transcript followed by eos.
pub fn target_symbols(transcript: &str) -> Result<Vec<usize>, CorpusError> {
    if transcript.is_empty() {
        return Err(CorpusError::EmptyTranscript);
    }
    if normalize_transcript(transcript) != transcript {
        return Err(CorpusError::NotNormalized(transcript.to_string()));
    }
    let mut ids = Vocabulary.encode(transcript).map_err(|_| CorpusError::NotNormalized(transcript.to_string()))?;
    ids.push(EOS);
    Ok(ids)
}

/// One utterance ready for training: frames, unstandardized targets and symbols.
#[derive(Debug, Clone)]
pub struct PreparedUtterance {
    pub id: String,
    pub transcript: String,
    /// Symbols with trailing eos.
    pub targets: Vec<usize>,
    pub frames: FrameMatrix,
    pub logmel: SpectralFeatures,
    pub mfcc: SpectralFeatures,
}

/// Reads, peak-normalizes and frames one utterance and computes both spectral targets.
pub fn prepare_utterance(u: &Utterance, cfg: &RunConfig) -> Result<PreparedUtterance, CorpusError> {
    let wav = read_wav_pcm16(&u.audio_path).map_err(|source| CorpusError::Audio { path: u.audio_path.clone(), source })?;
    if wav.sample_rate_hz != cfg.audio.sample_rate_hz {
        return Err(CorpusError::Audio {
            path: u.audio_path.clone(),
            source: DspError::UnsupportedAudio(format!(
                "sample rate {} Hz, configured {} Hz",
                wav.sample_rate_hz, cfg.audio.sample_rate_hz
            )),
        });
    }
    let wav = normalize_waveform(&wav)?;
    let frames = frame_signal(&wav, cfg.audio.frame_spec())?;
    let logmel = log_mel_spectrogram(&frames, cfg.features.n_mels)?;
    let mfcc = mfcc(&frames, cfg.features.n_mels, cfg.features.n_ceps)?;
    Ok(PreparedUtterance {
        id: u.id.clone(),
        transcript: u.transcript.clone(),
        targets: target_symbols(&u.transcript)?,
        frames,
        logmel,
        mfcc,
    })
}

pub fn prepare_manifest(m: &Manifest, cfg: &RunConfig) -> Result<Vec<PreparedUtterance>, CorpusError> {
    m.entries.iter().map(|u| prepare_utterance(u, cfg)).collect()
}
