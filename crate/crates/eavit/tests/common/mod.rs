//! Synthetic audio fixtures shared by the integration tests.
//!
//! Each fake genre is a fixed stack of sine partials rooted at its own
//! fundamental, so genres occupy distinct mel bands. Tracks within a genre
//! get a seeded detune, phase offset, amplitude wobble and noise, which
//! keeps segments of one track similar and tracks of one genre related but
//! not identical.

#![allow(dead_code)]

use eavit::dsp::write_wav_mono16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use std::path::Path;
use std::process::Command;

/// Command invoking the compiled `eavit` binary.
pub fn eavit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eavit"))
}

pub const SAMPLE_RATE: u32 = 8_000;

/// Fundamentals spread log-uniformly from 100 Hz to 2.5 kHz, far enough
/// apart that neighbouring genres land in different mel filters.
fn fundamental(genre: usize, genres: usize) -> f64 {
    let lo: f64 = 100.0;
    let hi: f64 = 2_500.0;
    if genres == 1 {
        return lo;
    }
    lo * (hi / lo).powf(genre as f64 / (genres - 1) as f64)
}

pub fn genre_name(genre: usize) -> String {
    format!("genre{genre:02}")
}

/// One mono track of `seconds` seconds at [`SAMPLE_RATE`].
pub fn synth_track(genre: usize, genres: usize, track: usize, seconds: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64((genre as u64) << 32 | track as u64);
    let detune: f64 = rng.gen_range(0.97..1.03);
    let phase: f64 = rng.gen_range(0.0..TAU);
    let wobble_hz: f64 = rng.gen_range(0.2..0.8);
    let base = fundamental(genre, genres) * detune;
    let nyquist = SAMPLE_RATE as f64 / 2.0;

    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let mut s = 0.0;
            for (k, mult) in [1.0, 2.0, 3.0].iter().enumerate() {
                let f = base * mult;
                if f < 0.9 * nyquist {
                    s += (TAU * f * t + phase).sin() / (k + 1) as f64;
                }
            }
            let wobble = 1.0 + 0.3 * (TAU * wobble_hz * t).sin();
            0.35 * wobble * s + rng.gen_range(-0.02..0.02)
        })
        .collect()
}

/// Writes `root/<genre>/<genre>.<track>.wav` for every genre and track.
pub fn write_genre_tree(root: &Path, genres: usize, tracks_per_genre: usize, seconds: f64) {
    for g in 0..genres {
        let name = genre_name(g);
        let dir = root.join(&name);
        std::fs::create_dir_all(&dir).unwrap();
        for t in 0..tracks_per_genre {
            let samples = synth_track(g, genres, t, seconds);
            let path = dir.join(format!("{name}.{t:05}.wav"));
            write_wav_mono16(&path, &samples, SAMPLE_RATE).unwrap();
        }
    }
}
