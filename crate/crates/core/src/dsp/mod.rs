//! Signal front end: waveform normalization, framing, log-Mel and MFCC targets,
//! per-dimension standardization, PCM16 WAVE I/O and CSV export.

mod spectral;
mod wav;

use std::io::Write;

pub use spectral::{dct2_ortho, dct3_ortho, hz_to_mel, log_mel_spectrogram, mel_to_hz, mfcc, MelFilterbank, LOG_FLOOR};
pub use wav::{read_wav_pcm16, write_wav_pcm16};

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("empty input")]
    EmptyInput,
    #[error("signal shorter than one window: {len} samples < {window}")]
    SignalTooShort { len: usize, window: usize },
    #[error("n_ceps ({n_ceps}) exceeds n_mels ({n_mels})")]
    TooManyCepstra { n_ceps: usize, n_mels: usize },
    #[error("invalid framing: {0}")]
    InvalidFraming(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self { samples, sample_rate_hz }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Scales samples by their peak magnitude so they span [-1, 1]. Silence is returned as is.
pub fn normalize_waveform(w: &Waveform) -> Result<Waveform, DspError> {
    if w.samples.is_empty() {
        return Err(DspError::EmptyInput);
    }
    let peak = w.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak == 0.0 {
        return Ok(w.clone());
    }
    Ok(Waveform::new(w.samples.iter().map(|s| s / peak).collect(), w.sample_rate_hz))
}

/// Window and hop lengths in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub frame_length_ms: u32,
    pub hop_ms: u32,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self { frame_length_ms: 25, hop_ms: 10 }
    }
}

impl FrameSpec {
    pub fn window(&self, sample_rate_hz: u32) -> usize {
        (self.frame_length_ms as u64 * sample_rate_hz as u64 / 1000) as usize
    }

    pub fn hop(&self, sample_rate_hz: u32) -> usize {
        (self.hop_ms as u64 * sample_rate_hz as u64 / 1000) as usize
    }
}

/// `S × W` matrix of raw (unwindowed) frames; row `s` starts at sample `s · hop`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub frames: Vec<f64>,
    pub n_frames: usize,
    pub width: usize,
    pub hop: usize,
    pub spec: FrameSpec,
    pub sample_rate_hz: u32,
}

impl FrameMatrix {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.frames[s * self.width..(s + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.frames.chunks(self.width)
    }

    /// Builds a matrix from explicit rows, all of equal width.
    pub fn from_rows(rows: &[Vec<f64>], sample_rate_hz: u32) -> Result<Self, DspError> {
        let width = rows.first().map(Vec::len).ok_or(DspError::EmptyInput)?;
        let mut frames = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(DspError::DimensionMismatch { expected: width, found: r.len() });
            }
            frames.extend_from_slice(r);
        }
        let spec = FrameSpec::default();
        Ok(Self {
            frames,
            n_frames: rows.len(),
            width,
            hop: spec.hop(sample_rate_hz),
            spec,
            sample_rate_hz,
        })
    }
}

/// Number of whole frames; the tail shorter than a window is dropped.
pub fn frame_count(n_samples: usize, window: usize, hop: usize) -> usize {
    if n_samples < window {
        0
    } else {
        (n_samples - window) / hop + 1
    }
}

pub fn frame_signal(w: &Waveform, spec: FrameSpec) -> Result<FrameMatrix, DspError> {
    let window = spec.window(w.sample_rate_hz);
    let hop = spec.hop(w.sample_rate_hz);
    if window == 0 || hop == 0 {
        return Err(DspError::InvalidFraming(format!(
            "{} ms / {} ms at {} Hz gives an empty window or hop",
            spec.frame_length_ms, spec.hop_ms, w.sample_rate_hz
        )));
    }
    if w.samples.len() < window {
        return Err(DspError::SignalTooShort { len: w.samples.len(), window });
    }
    let n_frames = frame_count(w.samples.len(), window, hop);
    let mut frames = Vec::with_capacity(n_frames * window);
    for s in 0..n_frames {
        frames.extend_from_slice(&w.samples[s * hop..s * hop + window]);
    }
    Ok(FrameMatrix {
        frames,
        n_frames,
        width: window,
        hop,
        spec,
        sample_rate_hz: w.sample_rate_hz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    LogMel,
    Mfcc,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::LogMel => "logmel",
            FeatureKind::Mfcc => "mfcc",
        }
    }
}

/// `S × D` spectral feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeatures {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub dim: usize,
    pub kind: FeatureKind,
    pub stats: Option<Standardizer>,
}

impl SpectralFeatures {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.dim..(s + 1) * self.dim]
    }

    pub fn is_standardized(&self) -> bool {
        self.stats.is_some()
    }

    /// One frame per line, comma separated, nine decimals.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.values.chunks(self.dim) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Dimensions whose spread falls below this are left unscaled.
pub const MIN_STD: f64 = 1e-8;

impl Standardizer {
    /// Pools every frame of every utterance.
    pub fn fit(corpus: &[&SpectralFeatures]) -> Result<Self, DspError> {
        let first = corpus.first().ok_or(DspError::EmptyCorpus)?;
        let dim = first.dim;
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        for f in corpus {
            if f.dim != dim {
                return Err(DspError::DimensionMismatch { expected: dim, found: f.dim });
            }
            for row in f.values.chunks(dim) {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            count += f.n_frames;
        }
        if count == 0 {
            return Err(DspError::EmptyCorpus);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; dim];
        for f in corpus {
            for row in f.values.chunks(dim) {
                for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, f: &SpectralFeatures) -> Result<SpectralFeatures, DspError> {
        if f.dim != self.mean.len() {
            return Err(DspError::DimensionMismatch { expected: self.mean.len(), found: f.dim });
        }
        let values = f
            .values
            .chunks(f.dim)
            .flat_map(|row| row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s))
            .collect();
        Ok(SpectralFeatures {
            values,
            n_frames: f.n_frames,
            dim: f.dim,
            kind: f.kind,
            stats: Some(self.clone()),
        })
    }
}
