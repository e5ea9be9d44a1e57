//! Straight-line log-Mel / MFCC reference: direct DFT, hand-built filters, direct cosine sums.
//! Deliberately shares no code with the library front end.
#![allow(dead_code)]

pub fn ref_mel(hz: f64) -> f64 {
    2595.0 * (hz / 700.0 + 1.0).log10()
}

pub fn ref_hz(mel: f64) -> f64 {
    (10f64.powf(mel / 2595.0) - 1.0) * 700.0
}

/// Filter center frequencies for `n_mels` filters spanning 0..sr/2.
pub fn ref_centers(n_mels: usize, sample_rate: f64) -> Vec<f64> {
    let top = ref_mel(sample_rate / 2.0);
    let step = top / (n_mels as f64 + 1.0);
    (1..=n_mels).map(|i| ref_hz(step * i as f64)).collect()
}

pub fn ref_log_mel(frame: &[f64], n_mels: usize, sample_rate: f64) -> Vec<f64> {
    let w = frame.len();
    let mut n_fft = 1;
    while n_fft < w {
        n_fft *= 2;
    }
    let mut power = Vec::new();
    for k in 0..=n_fft / 2 {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (n, x) in frame.iter().enumerate() {
            let win = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / w as f64).cos());
            let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / n_fft as f64;
            re += x * win * ang.cos();
            im += x * win * ang.sin();
        }
        power.push(re * re + im * im);
    }
    let top = ref_mel(sample_rate / 2.0);
    let step = top / (n_mels as f64 + 1.0);
    let mut out = Vec::new();
    for m in 1..=n_mels {
        let left = ref_hz(step * (m - 1) as f64);
        let mid = ref_hz(step * m as f64);
        let right = ref_hz(step * (m + 1) as f64);
        let mut energy = 0.0;
        for (k, p) in power.iter().enumerate() {
            let f = k as f64 * sample_rate / n_fft as f64;
            let weight = if f < left || f > right {
                0.0
            } else if f <= mid {
                (f - left) / (mid - left)
            } else {
                (right - f) / (right - mid)
            };
            energy += weight * p;
        }
        out.push((energy + 1e-10).ln());
    }
    out
}

/// Orthonormal DCT-II by direct cosine sums, first `n_ceps` coefficients.
pub fn ref_dct(x: &[f64], n_ceps: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_ceps)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI / n * (i as f64 + 0.5) * k as f64).cos())
                .sum();
            if k == 0 {
                s * (1.0 / n).sqrt()
            } else {
                s * (2.0 / n).sqrt()
            }
        })
        .collect()
}

pub fn ref_mfcc(frame: &[f64], n_mels: usize, n_ceps: usize, sample_rate: f64) -> Vec<f64> {
    ref_dct(&ref_log_mel(frame, n_mels, sample_rate), n_ceps)
}
