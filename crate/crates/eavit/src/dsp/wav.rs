//! Minimal RIFF/WAVE reader and writer for 16-bit mono PCM.

use super::AudioClip;
use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Loads a 16-bit mono PCM WAV file, scaling samples by 1/32768.
///
/// Multi-channel, non-PCM and truncated files are rejected; unknown RIFF
/// chunks are skipped.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path).map_err(|e| Error::Io(path.to_path_buf(), e))?;
    let fail = |msg: &str| Error::data(path, msg);

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(fail("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(fail("truncated chunk"));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fail("fmt chunk too short"));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start + size + (size & 1); // chunks are word-aligned
    }

    let (format, channels, sample_rate, bits) = fmt.ok_or_else(|| fail("missing fmt chunk"))?;
    if format != 1 {
        return Err(fail(&format!("unsupported audio format {format}, expected PCM (1)")));
    }
    if channels != 1 {
        return Err(fail(&format!("unsupported channel count {channels}, expected mono")));
    }
    if bits != 16 {
        return Err(fail(&format!("unsupported bit depth {bits}, expected 16")));
    }
    if sample_rate == 0 {
        return Err(fail("sample rate 0"));
    }
    let data = data.ok_or_else(|| fail("missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(fail("data chunk length is not a whole number of samples"));
    }

    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32_768.0)
        .collect();
    Ok(AudioClip { samples, sample_rate })
}

/// Writes samples as 16-bit mono PCM, clamping to [-1, 1); used to build
/// synthetic fixtures and by tooling.
pub fn write_wav_mono16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let mut pcm = Vec::with_capacity(samples.len() * 2);
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0 - 1.0 / 32_768.0) * 32_768.0).round() as i32;
        pcm.extend_from_slice(&(v.clamp(i16::MIN as i32, i16::MAX as i32) as i16).to_le_bytes());
    }
    let data_len = pcm.len() as u32;
    let byte_rate = sample_rate * 2;

    let mut out = Vec::with_capacity(44 + pcm.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out.extend_from_slice(&pcm);

    let mut file = fs::File::create(path).map_err(|e| Error::Io(path.to_path_buf(), e))?;
    file.write_all(&out).map_err(|e| Error::Io(path.to_path_buf(), e))?;
    Ok(())
}
