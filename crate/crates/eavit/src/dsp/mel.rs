//! Mel filter bank construction and application.

use super::{Matrix, Spectrogram};
use crate::error::{Error, Result};

/// HTK mel scale: mel(f) = 2595 log10(1 + f / 700).
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with mel-equispaced centers, each row rescaled to a
/// peak of exactly 1 over the FFT bin grid.
#[derive(Debug, Clone)]
pub struct MelFilterBank {
    pub n_mels: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
    /// Row-major [n_mels x (n_fft/2 + 1)] weights.
    pub weights: Matrix,
    centers_hz: Vec<f64>,
}

impl MelFilterBank {
    pub fn new(
        n_mels: usize,
        n_fft: usize,
        sample_rate: u32,
        fmin: f64,
        fmax: f64,
    ) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if !(0.0..nyquist).contains(&fmin) || fmax <= fmin || fmax > nyquist {
            return Err(Error::Config(format!(
                "mel range must satisfy 0 <= fmin < fmax <= {nyquist}, got {fmin}..{fmax}"
            )));
        }

        let n_bins = n_fft / 2 + 1;
        let mel_lo = hz_to_mel(fmin);
        let mel_hi = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();

        let bin_hz: Vec<f64> =
            (0..n_bins).map(|k| k as f64 * sample_rate as f64 / n_fft as f64).collect();

        let mut weights = Matrix::zeros(n_mels, n_bins);
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut peak = 0.0f64;
            for (k, &f) in bin_hz.iter().enumerate() {
                let rising = (f - left) / (center - left);
                let falling = (right - f) / (right - center);
                let w = rising.min(falling).max(0.0);
                weights.set(m, k, w);
                peak = peak.max(w);
            }
            if peak > 0.0 {
                for k in 0..n_bins {
                    let w = weights.at(m, k) / peak;
                    weights.set(m, k, w);
                }
            }
        }

        Ok(MelFilterBank {
            n_mels,
            n_fft,
            sample_rate,
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
        })
    }

    /// Triangle peak frequencies, strictly increasing.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }
}

/// Projects squared magnitudes through the filter bank:
/// out[m][t] = sum_k weights[m][k] * magnitude[k][t]^2.
pub fn apply_mel(spec: &Spectrogram, bank: &MelFilterBank) -> Result<Matrix> {
    let n_bins = spec.n_bins();
    if bank.weights.cols != n_bins {
        return Err(Error::Config(format!(
            "filter bank expects {} bins but the spectrogram has {n_bins}",
            bank.weights.cols
        )));
    }
    let frames = spec.n_frames();
    let mut out = Matrix::zeros(bank.n_mels, frames);
    for m in 0..bank.n_mels {
        for k in 0..n_bins {
            let w = bank.weights.at(m, k);
            if w == 0.0 {
                continue;
            }
            for t in 0..frames {
                let mag = spec.magnitudes.at(k, t);
                out.data[m * frames + t] += w * mag * mag;
            }
        }
    }
    Ok(out)
}
