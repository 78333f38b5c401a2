//! Short-time Fourier transform and decibel scaling.

use super::{Matrix, Segment, Spectrogram};
use crate::error::{Error, Result};
use rustfft::{num_complex::Complex, FftPlanner};

/// Guard against log of zero in decibel conversion.
const DB_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann window, the default for spectrogram analysis.
    Hann,
    Rectangular,
}

impl Window {
    fn values(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// Magnitude STFT with centered frames over reflect padding.
///
/// Produces `1 + floor(len / hop)` frames of `n_fft/2 + 1` bins each.
pub fn stft(seg: &Segment, n_fft: usize, hop: usize, window: Window) -> Result<Spectrogram> {
    if n_fft == 0 || !n_fft.is_power_of_two() {
        return Err(Error::Config(format!("n_fft must be a power of two, got {n_fft}")));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::Config(format!("hop must satisfy 0 < hop <= n_fft, got {hop}")));
    }
    let pad = n_fft / 2;
    if seg.samples.len() <= pad {
        return Err(Error::Config(format!(
            "segment of {} samples is too short for an n_fft of {n_fft}",
            seg.samples.len()
        )));
    }

    let padded = reflect_pad(&seg.samples, pad);
    let n_frames = 1 + seg.samples.len() / hop;
    let n_bins = n_fft / 2 + 1;
    let win = window.values(n_fft);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut mag = Matrix::zeros(n_bins, n_frames);
    for t in 0..n_frames {
        let frame = &padded[t * hop..t * hop + n_fft];
        for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&win)) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            mag.set(k, t, buf[k].norm());
        }
    }
    Ok(Spectrogram { magnitudes: mag, sample_rate: seg.sample_rate, n_fft })
}

/// Mirror padding without repeating the edge sample, matching centered
/// spectrogram conventions.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in 0..pad {
        out.push(x[pad - i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[n - 2 - i]);
    }
    out
}

/// Converts a matrix of power-domain values to decibels relative to its
/// peak: 10 log10(max(p, eps) / max), floored at -top_db.
pub fn power_to_db(power: &Matrix, top_db: f64) -> Matrix {
    debug_assert!(power.data.iter().all(|&v| v >= 0.0), "power entries must be non-negative");
    let reference = power.max_value().max(DB_EPS);
    let floor = -top_db.abs();
    let data = power
        .data
        .iter()
        .map(|&p| (10.0 * (p.max(DB_EPS) / reference).log10()).max(floor))
        .collect();
    Matrix { rows: power.rows, cols: power.cols, data }
}
