//! Manifest-backed dataset loading and deterministic stratified splits.

use crate::dsp::{read_pgm, read_manifest, MelImage};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// All samples of a preprocessed dataset held in memory: one spectrogram
/// image per segment with its label and originating track.
pub struct LoadedDataset {
    pub images: Vec<MelImage>,
    pub labels: Vec<usize>,
    pub track_ids: Vec<String>,
    pub class_names: Vec<String>,
}

/// How validation units are drawn: whole tracks (no segment of a track
/// crosses the split) or individual segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Track,
    Segment,
}

/// Index lists into a `LoadedDataset`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl LoadedDataset {
    /// Reads `manifest.csv` and the images and class list beside it.
    pub fn from_manifest(manifest_path: &Path) -> Result<Self> {
        let entries = read_manifest(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));

        let classes_path = dir.join("classes.txt");
        let classes_text = std::fs::read_to_string(&classes_path)
            .map_err(|e| Error::Io(classes_path.clone(), e))?;
        let class_names: Vec<String> =
            classes_text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect();
        if class_names.is_empty() {
            return Err(Error::data(&classes_path, "no class names"));
        }

        let mut images = Vec::with_capacity(entries.len());
        let mut labels = Vec::with_capacity(entries.len());
        let mut track_ids = Vec::with_capacity(entries.len());
        for e in &entries {
            if e.label >= class_names.len() {
                return Err(Error::Dataset(format!(
                    "{}: label {} out of range for {} classes",
                    e.path,
                    e.label,
                    class_names.len()
                )));
            }
            images.push(read_pgm(&dir.join(&e.path))?);
            labels.push(e.label);
            track_ids.push(e.track_id.clone());
        }
        Ok(LoadedDataset { images, labels, track_ids, class_names })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stratified train/validation split. Within every class the unit lists
    /// are shuffled with a seed derived from `seed` and the class label, so
    /// the split depends only on the dataset content, the mode and the seed.
    /// Validation quotas follow floor-plus-largest-remainder on the exact
    /// per-class shares, so the overall fraction is met as closely as the
    /// unit counts allow.
    pub fn split(&self, mode: SplitMode, val_fraction: f64, seed: u64) -> Result<Split> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0, 1), got {val_fraction}"
            )));
        }
        // Units per class: each unit owns one or more sample indices.
        let mut per_class: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
        match mode {
            SplitMode::Segment => {
                for (i, &label) in self.labels.iter().enumerate() {
                    per_class.entry(label).or_default().push(vec![i]);
                }
            }
            SplitMode::Track => {
                let mut tracks: BTreeMap<(usize, &str), Vec<usize>> = BTreeMap::new();
                for (i, (&label, track)) in
                    self.labels.iter().zip(&self.track_ids).enumerate()
                {
                    tracks.entry((label, track.as_str())).or_default().push(i);
                }
                for ((label, _), indices) in tracks {
                    per_class.entry(label).or_default().push(indices);
                }
            }
        }

        let total_units: usize = per_class.values().map(|u| u.len()).sum();
        let mut val_total = (val_fraction * total_units as f64).round() as usize;
        val_total = val_total.min(total_units);

        // Largest remainder apportionment of val_total across classes.
        let mut base: Vec<(usize, usize, f64)> = per_class
            .iter()
            .map(|(&label, units)| {
                let exact = val_fraction * units.len() as f64;
                (label, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let mut assigned: usize = base.iter().map(|b| b.1).sum();
        let mut order: Vec<usize> = (0..base.len()).collect();
        order.sort_by(|&i, &j| {
            base[j].2.partial_cmp(&base[i].2).unwrap().then(base[i].0.cmp(&base[j].0))
        });
        let mut cursor = 0;
        while assigned < val_total {
            let k = order[cursor % order.len()];
            if base[k].1 < per_class[&base[k].0].len() {
                base[k].1 += 1;
                assigned += 1;
            }
            cursor += 1;
            if cursor > 2 * order.len() + val_total {
                break;
            }
        }

        let mut split = Split { train: Vec::new(), val: Vec::new() };
        for (label, take_val, _) in base {
            let mut units = per_class.remove(&label).expect("class present");
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (label as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            units.shuffle(&mut rng);
            for (u, unit) in units.into_iter().enumerate() {
                let target = if u < take_val { &mut split.val } else { &mut split.train };
                target.extend(unit);
            }
        }
        split.train.sort_unstable();
        split.val.sort_unstable();
        if split.train.is_empty() {
            return Err(Error::Dataset("split left no training samples".into()));
        }
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(tracks_per_class: usize, segments_per_track: usize) -> LoadedDataset {
        let class_names = vec!["alpha".to_string(), "beta".to_string()];
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut track_ids = Vec::new();
        for label in 0..2 {
            for t in 0..tracks_per_class {
                for s in 0..segments_per_track {
                    images.push(MelImage {
                        width: 2,
                        height: 2,
                        pixels: vec![(label * 50 + t * 5 + s) as u8; 4],
                    });
                    labels.push(label);
                    track_ids.push(format!("{}/{t:03}", class_names[label]));
                }
            }
        }
        LoadedDataset { images, labels, track_ids, class_names }
    }

    #[test]
    fn track_split_keeps_whole_tracks_together() {
        let ds = toy_dataset(10, 5);
        let split = ds.split(SplitMode::Track, 0.2, 7).unwrap();
        assert_eq!(split.train.len() + split.val.len(), ds.len());
        // 20 tracks, 20% -> 4 val tracks -> 20 val segments, 2 per class.
        assert_eq!(split.val.len(), 20);
        for indices in [&split.train, &split.val] {
            for &i in indices.iter() {
                let track = &ds.track_ids[i];
                let in_val = split.val.iter().any(|&j| &ds.track_ids[j] == track);
                let in_train = split.train.iter().any(|&j| &ds.track_ids[j] == track);
                assert!(in_val != in_train, "track {track} straddles the split");
            }
        }
        // Stratified: both classes contribute equally.
        let val_class0 = split.val.iter().filter(|&&i| ds.labels[i] == 0).count();
        assert_eq!(val_class0, 10);
    }

    #[test]
    fn segment_split_is_stratified_and_exact() {
        let ds = toy_dataset(10, 5);
        let split = ds.split(SplitMode::Segment, 0.3, 3).unwrap();
        // 100 segments, 30% -> 30 validation segments, 15 per class.
        assert_eq!(split.val.len(), 30);
        let val_class0 = split.val.iter().filter(|&&i| ds.labels[i] == 0).count();
        assert_eq!(val_class0, 15);
        // Unlike the track mode, tracks may straddle the split; with five
        // segments per track and 30% sampled, some track must.
        let straddles = split.val.iter().any(|&i| {
            split.train.iter().any(|&j| ds.track_ids[j] == ds.track_ids[i])
        });
        assert!(straddles);
    }

    #[test]
    fn splits_are_deterministic_in_the_seed() {
        let ds = toy_dataset(6, 3);
        let a = ds.split(SplitMode::Track, 0.25, 11).unwrap();
        let b = ds.split(SplitMode::Track, 0.25, 11).unwrap();
        let c = ds.split(SplitMode::Track, 0.25, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn no_overlap_and_full_coverage() {
        let ds = toy_dataset(7, 4);
        for mode in [SplitMode::Track, SplitMode::Segment] {
            let split = ds.split(mode, 0.4, 5).unwrap();
            let mut all: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
            all.sort_unstable();
            let expect: Vec<usize> = (0..ds.len()).collect();
            assert_eq!(all, expect);
        }
    }

    #[test]
    fn zero_fraction_puts_everything_in_train() {
        let ds = toy_dataset(3, 2);
        let split = ds.split(SplitMode::Track, 0.0, 1).unwrap();
        assert!(split.val.is_empty());
        assert_eq!(split.train.len(), ds.len());
        assert!(ds.split(SplitMode::Track, 1.0, 1).is_err());
    }
}
