//! Audio preprocessing: PCM decoding, segmentation, STFT, mel projection,
//! decibel scaling and spectrogram-image rendering.
//!
//! All signal math runs at 64-bit; images quantize to 8-bit at the very end.

mod image;
mod mel;
mod preprocess;
mod stft;
mod wav;

pub use image::{read_pgm, to_image, write_pgm, MelImage};
pub use mel::{apply_mel, hz_to_mel, mel_to_hz, MelFilterBank};
pub use preprocess::{
    preprocess_dataset, read_manifest, segment_to_image, write_manifest, ManifestEntry,
    PreprocessReport,
};
pub use stft::{power_to_db, stft, Window};
pub use wav::{load_wav, write_wav_mono16};

use crate::error::{Error, Result};

/// Decoded mono audio, samples scaled to [-1, 1).
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// One fixed-length training window cut from a clip.
#[derive(Debug, Clone)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    /// Position of this segment within its source clip.
    pub index: usize,
}

/// Dense row-major matrix of 64-bit reals; the working type between
/// pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Magnitude spectrogram: rows are frequency bins (n_fft/2 + 1 of them),
/// columns are frames.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub magnitudes: Matrix,
    pub sample_rate: u32,
    pub n_fft: usize,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.magnitudes.rows
    }

    pub fn n_frames(&self) -> usize {
        self.magnitudes.cols
    }
}

/// STFT, mel and image-rendering settings for the preprocessing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub segment_seconds: f64,
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper mel edge; `None` means the Nyquist frequency.
    pub fmax: Option<f64>,
    pub top_db: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sample_rate: 22_050,
            segment_seconds: 3.0,
            n_fft: 2048,
            hop: 512,
            window: Window::Hann,
            n_mels: 128,
            fmin: 0.0,
            fmax: None,
            top_db: 80.0,
        }
    }
}

impl DspConfig {
    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }
}

/// Cuts a clip into consecutive segments of `seconds`, dropping the tail.
/// Errors when the clip is shorter than a single segment.
pub fn segment(clip: &AudioClip, seconds: f64) -> Result<Vec<Segment>> {
    if !(seconds > 0.0) {
        return Err(Error::Config(format!("segment_seconds must be positive, got {seconds}")));
    }
    let seg_len = (seconds * clip.sample_rate as f64).round() as usize;
    if seg_len == 0 || clip.samples.len() < seg_len {
        return Err(Error::Dataset(format!(
            "clip of {} samples is shorter than one {seconds} s segment ({seg_len} samples)",
            clip.samples.len()
        )));
    }
    let count = clip.samples.len() / seg_len;
    Ok((0..count)
        .map(|i| Segment {
            samples: clip.samples[i * seg_len..(i + 1) * seg_len].to_vec(),
            sample_rate: clip.sample_rate,
            index: i,
        })
        .collect())
}
