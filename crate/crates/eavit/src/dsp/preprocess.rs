//! Dataset preprocessing: genre directories of WAV files in, spectrogram
//! images plus a manifest out.

use super::{apply_mel, load_wav, power_to_db, segment, stft, to_image, write_pgm};
use super::{DspConfig, MelFilterBank, MelImage, Segment};
use crate::error::{Error, Result};
use std::fs;
use std::path::{Path, PathBuf};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Image path relative to the manifest's directory.
    pub path: String,
    pub track_id: String,
    pub segment_index: usize,
    pub label: usize,
}

/// Outcome summary of a preprocessing run.
#[derive(Debug)]
pub struct PreprocessReport {
    pub classes: Vec<String>,
    pub entries: usize,
    /// Files that could not be processed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
    pub manifest_path: PathBuf,
}

/// Full per-segment pipeline: STFT, mel projection, decibel scaling, image
/// rendering. This is the unit of work preprocessing parallelizes over.
pub fn segment_to_image(
    seg: &Segment,
    cfg: &DspConfig,
    bank: &MelFilterBank,
    height: usize,
    width: usize,
) -> Result<MelImage> {
    let spec = stft(seg, cfg.n_fft, cfg.hop, cfg.window)?;
    let mel = apply_mel(&spec, bank)?;
    let db = power_to_db(&mel, cfg.top_db);
    Ok(to_image(&db, height, width))
}

/// Converts `root/<genre>/*.wav` into `out_dir/images/<genre>/*.pgm`, a
/// `manifest.csv` and a `classes.txt`. Genres are the sorted directory
/// names; labels are their indices. Unreadable files are skipped and
/// reported. With the `parallel` feature, files are processed concurrently;
/// output order is by sorted path either way, so manifests are
/// byte-identical across runs.
pub fn preprocess_dataset(
    root: &Path,
    cfg: &DspConfig,
    image_size: (usize, usize),
    out_dir: &Path,
) -> Result<PreprocessReport> {
    let mut classes = Vec::new();
    let mut jobs: Vec<(PathBuf, String, usize)> = Vec::new(); // wav, track_id, label
    let mut genre_dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::Io(root.to_path_buf(), e))? {
        let entry = entry.map_err(|e| Error::Io(root.to_path_buf(), e))?;
        if entry.path().is_dir() {
            genre_dirs.push(entry.path());
        }
    }
    genre_dirs.sort();
    for dir in &genre_dirs {
        let genre = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::data(dir.clone(), "genre directory is not valid UTF-8"))?
            .to_owned();
        let mut wavs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::Io(dir.clone(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        if wavs.is_empty() {
            continue;
        }
        wavs.sort();
        let label = classes.len();
        classes.push(genre.clone());
        for wav in wavs {
            let stem = wav
                .file_stem()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::data(wav.clone(), "file name is not valid UTF-8"))?
                .to_owned();
            jobs.push((wav.clone(), format!("{genre}/{stem}"), label));
        }
    }
    if classes.is_empty() {
        return Err(Error::Dataset(format!(
            "no genre directories with .wav files under {}",
            root.display()
        )));
    }

    let bank = MelFilterBank::new(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.fmin, cfg.fmax_hz())?;
    let images_dir = out_dir.join("images");
    for genre in &classes {
        fs::create_dir_all(images_dir.join(genre))
            .map_err(|e| Error::Io(images_dir.join(genre), e))?;
    }

    let process = |(wav, track_id, label): &(PathBuf, String, usize)| -> Result<Vec<ManifestEntry>> {
        let clip = load_wav(wav)?;
        if clip.sample_rate != cfg.sample_rate {
            return Err(Error::data(
                wav.clone(),
                format!("sample rate {} does not match configured {}", clip.sample_rate, cfg.sample_rate),
            ));
        }
        let segments = segment(&clip, cfg.segment_seconds)?;
        let mut rows = Vec::with_capacity(segments.len());
        for seg in &segments {
            let img = segment_to_image(seg, cfg, &bank, image_size.0, image_size.1)?;
            let rel = format!(
                "images/{track_id}.seg{:02}.pgm",
                seg.index
            );
            write_pgm(&out_dir.join(&rel), &img)?;
            rows.push(ManifestEntry {
                path: rel,
                track_id: track_id.clone(),
                segment_index: seg.index,
                label: *label,
            });
        }
        Ok(rows)
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<Vec<ManifestEntry>>> = jobs.par_iter().map(process).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Vec<ManifestEntry>>> = jobs.iter().map(process).collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(rows) => entries.extend(rows),
            Err(e) => skipped.push((job.0.clone(), e.to_string())),
        }
    }
    if entries.is_empty() {
        return Err(Error::Dataset("no file could be preprocessed".into()));
    }

    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &entries)?;
    let classes_path = out_dir.join("classes.txt");
    fs::write(&classes_path, classes.join("\n") + "\n")
        .map_err(|e| Error::Io(classes_path.clone(), e))?;

    Ok(PreprocessReport { classes, entries: entries.len(), skipped, manifest_path })
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    w.write_record(["path", "track_id", "segment_index", "label"])
        .map_err(|e| Error::data(path, e.to_string()))?;
    for e in entries {
        w.write_record([
            e.path.as_str(),
            e.track_id.as_str(),
            &e.segment_index.to_string(),
            &e.label.to_string(),
        ])
        .map_err(|err| Error::data(path, err.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io(path.to_path_buf(), e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    let headers = r.headers().map_err(|e| Error::data(path, e.to_string()))?.clone();
    let expected = ["path", "track_id", "segment_index", "label"];
    if headers.iter().ne(expected) {
        return Err(Error::data(
            path,
            format!("manifest header must be {}", expected.join(",")),
        ));
    }
    let mut entries = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::data(path, e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        entries.push(ManifestEntry {
            path: field(0).to_owned(),
            track_id: field(1).to_owned(),
            segment_index: field(2)
                .parse()
                .map_err(|_| Error::data(path, format!("bad segment_index {}", field(2))))?,
            label: field(3)
                .parse()
                .map_err(|_| Error::data(path, format!("bad label {}", field(3))))?,
        });
    }
    if entries.is_empty() {
        return Err(Error::data(path, "manifest has no rows"));
    }
    Ok(entries)
}
