use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DspError, FeatureKind, FrameMatrix, SpectralFeatures};

/// Added to filterbank energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the Mel scale from 0 Hz to Nyquist, peak weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_fft: usize,
    pub sample_rate_hz: u32,
    /// `n_mels × (n_fft/2 + 1)` row-major.
    pub weights: Vec<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate_hz: u32) -> Self {
        let n_bins = n_fft / 2 + 1;
        let nyquist = sample_rate_hz as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate_hz as f64 / n_fft as f64;
        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f >= lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f <= hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w;
            }
        }
        Self {
            n_mels,
            n_fft,
            sample_rate_hz,
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        let n = self.n_bins();
        &self.weights[m * n..(m + 1) * n]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.filter(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

fn fft_size(width: usize) -> usize {
    width.next_power_of_two()
}

/// Periodic Hann window.
fn hann(width: usize) -> Vec<f64> {
    (0..width)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / width as f64).cos())
        .collect()
}

/// Hann window, zero-padded FFT, |X|², Mel filterbank, `ln(x + LOG_FLOOR)`.
pub fn log_mel_spectrogram(fm: &FrameMatrix, n_mels: usize) -> Result<SpectralFeatures, DspError> {
    if n_mels == 0 {
        return Err(DspError::InvalidFraming("n_mels must be at least 1".into()));
    }
    if fm.n_frames == 0 || fm.width == 0 {
        return Err(DspError::EmptyInput);
    }
    let n_fft = fft_size(fm.width);
    let bank = MelFilterbank::new(n_mels, n_fft, fm.sample_rate_hz);
    let window = hann(fm.width);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut values = Vec::with_capacity(fm.n_frames * n_mels);
    for frame in fm.rows() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for ((b, x), w) in buf.iter_mut().zip(frame).zip(&window) {
            b.re = x * w;
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..bank.n_bins()].iter().map(|c| c.norm_sqr()).collect();
        values.extend(bank.apply(&power).into_iter().map(|e| (e + LOG_FLOOR).ln()));
    }
    Ok(SpectralFeatures {
        values,
        n_frames: fm.n_frames,
        dim: n_mels,
        kind: FeatureKind::LogMel,
        stats: None,
    })
}

fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m[k * n + i] = scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// Orthonormal DCT-II.
pub fn dct2_ortho(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = dct_matrix(n);
    m.chunks(n.max(1)).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Orthonormal DCT-III, the inverse of [`dct2_ortho`].
pub fn dct3_ortho(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let m = dct_matrix(n);
    (0..n).map(|i| (0..n).map(|k| m[k * n + i] * c[k]).sum()).collect()
}

/// First `n_ceps` orthonormal DCT-II coefficients of each log-Mel frame.
pub fn mfcc(fm: &FrameMatrix, n_mels: usize, n_ceps: usize) -> Result<SpectralFeatures, DspError> {
    if n_ceps > n_mels {
        return Err(DspError::TooManyCepstra { n_ceps, n_mels });
    }
    let logmel = log_mel_spectrogram(fm, n_mels)?;
    let m = dct_matrix(n_mels);
    let mut values = Vec::with_capacity(fm.n_frames * n_ceps);
    for row in logmel.values.chunks(n_mels) {
        for k in 0..n_ceps {
            values.push(m[k * n_mels..(k + 1) * n_mels].iter().zip(row).map(|(a, b)| a * b).sum());
        }
    }
    Ok(SpectralFeatures {
        values,
        n_frames: fm.n_frames,
        dim: n_ceps,
        kind: FeatureKind::Mfcc,
        stats: None,
    })
}
