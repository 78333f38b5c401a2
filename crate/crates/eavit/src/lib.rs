//! Audio genre classification with an external-attention vision
//! transformer: WAV decoding, mel-spectrogram imaging, a small reverse-mode
//! autodiff engine, the model itself, training and evaluation.

pub mod bench;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;
