//! Classification metrics: confusion matrix, per-class precision, recall
//! and F1, macro averages, and CSV output.

mod svg;

pub use svg::{
    confusion_heatmap_svg, line_chart_svg, stack_svgs_vertically, Series, CHART_HEIGHT,
    CHART_WIDTH,
};

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Square count matrix with true labels on rows and predictions on columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

/// Per-class precision, recall and F1. A class that was never predicted
/// has precision 0 by convention; one that never occurs has recall 0; F1
/// is 0 whenever precision + recall is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of ground-truth samples of this class.
    pub support: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub total: usize,
}

impl ConfusionMatrix {
    pub fn from_pairs(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Dataset("confusion matrix needs at least one class".into()));
        }
        if truth.len() != predicted.len() {
            return Err(Error::Dataset(format!(
                "got {} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Dataset("no samples to evaluate".into()));
        }
        let mut counts = vec![0usize; classes * classes];
        for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
            if t >= classes || p >= classes {
                return Err(Error::Dataset(format!(
                    "sample {i}: label pair ({t}, {p}) out of range for {classes} classes"
                )));
            }
            counts[t * classes + p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Fraction of samples on the diagonal.
    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.classes).map(|c| self.count(c, c)).sum();
        correct as f64 / self.total() as f64
    }

    pub fn class_metrics(&self, class: usize) -> ClassMetrics {
        let tp = self.count(class, class);
        let predicted: usize = (0..self.classes).map(|t| self.count(t, class)).sum();
        let actual: usize = (0..self.classes).map(|p| self.count(class, p)).sum();
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics { precision, recall, f1, support: actual }
    }

    pub fn report(&self, class_names: &[String]) -> Result<MetricsReport> {
        if class_names.len() != self.classes {
            return Err(Error::Dataset(format!(
                "{} class names for a {}-class matrix",
                class_names.len(),
                self.classes
            )));
        }
        let per_class: Vec<ClassMetrics> =
            (0..self.classes).map(|c| self.class_metrics(c)).collect();
        let n = self.classes as f64;
        Ok(MetricsReport {
            class_names: class_names.to_vec(),
            accuracy: self.accuracy(),
            macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
            macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
            macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
            total: self.total(),
            per_class,
        })
    }

    /// Writes the raw counts as CSV, predictions across the columns.
    pub fn write_csv(&self, class_names: &[String], path: &Path) -> Result<()> {
        if class_names.len() != self.classes {
            return Err(Error::Dataset(format!(
                "{} class names for a {}-class matrix",
                class_names.len(),
                self.classes
            )));
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["class".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for t in 0..self.classes {
            let mut row = vec![class_names[t].clone()];
            row.extend((0..self.classes).map(|p| self.count(t, p).to_string()));
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::Io(path.to_path_buf(), e))?;
        Ok(())
    }
}

impl MetricsReport {
    /// Per-class rows, a macro-average row, and an accuracy row. Floats use
    /// Rust's shortest round-trip formatting, so parsing the file back
    /// recovers the exact values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["class", "precision", "recall", "f1", "support"])
            .map_err(|e| csv_error(path, e))?;
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            w.write_record([
                name.as_str(),
                &m.precision.to_string(),
                &m.recall.to_string(),
                &m.f1.to_string(),
                &m.support.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.write_record([
            "macro",
            &self.macro_precision.to_string(),
            &self.macro_recall.to_string(),
            &self.macro_f1.to_string(),
            &self.total.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
        w.write_record(["accuracy", &self.accuracy.to_string(), "", "", &self.total.to_string()])
            .map_err(|e| csv_error(path, e))?;
        w.flush().map_err(|e| Error::Io(path.to_path_buf(), e))?;
        Ok(())
    }

    /// Human-readable table for terminal output.
    pub fn render_text(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(|n| n.len())
            .chain(std::iter::once("macro avg".len()))
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(
            StringWriter(&mut out),
            "{:width$}  precision  recall  f1      support",
            "class"
        );
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            let _ = writeln!(
                StringWriter(&mut out),
                "{name:width$}  {:<9.4}  {:<6.4}  {:<6.4}  {}",
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        let _ = writeln!(
            StringWriter(&mut out),
            "{:width$}  {:<9.4}  {:<6.4}  {:<6.4}  {}",
            "macro avg",
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.total
        );
        let _ = writeln!(
            StringWriter(&mut out),
            "accuracy {:.4} ({:.2}%) on {} samples",
            self.accuracy,
            self.accuracy * 100.0,
            self.total
        );
        out
    }
}

/// Majority vote over per-segment predictions. Ties are broken by the
/// summed class probabilities across segments, then by the smaller label.
pub fn majority_vote(predicted: &[usize], probs: &[Vec<f64>], classes: usize) -> Result<usize> {
    if predicted.is_empty() {
        return Err(Error::Dataset("majority vote over zero segments".into()));
    }
    if predicted.len() != probs.len() {
        return Err(Error::Dataset(format!(
            "{} predictions but {} probability rows",
            predicted.len(),
            probs.len()
        )));
    }
    let mut votes = vec![0usize; classes];
    let mut mass = vec![0.0f64; classes];
    for (&p, row) in predicted.iter().zip(probs) {
        if p >= classes || row.len() != classes {
            return Err(Error::Dataset(format!(
                "vote ({p}, {} probabilities) out of range for {classes} classes",
                row.len()
            )));
        }
        votes[p] += 1;
        for (m, &q) in mass.iter_mut().zip(row) {
            *m += q;
        }
    }
    let top = *votes.iter().max().expect("nonempty");
    let mut best = None;
    for c in 0..classes {
        if votes[c] == top {
            best = match best {
                None => Some(c),
                Some(b) if mass[c] > mass[b] => Some(c),
                keep => keep,
            };
        }
    }
    Ok(best.expect("at least one class has the top vote count"))
}

/// Adapter so `write!` can target a `String` through `io::Write` formatting.
struct StringWriter<'a>(&'a mut String);

impl std::io::Write for StringWriter<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.push_str(std::str::from_utf8(buf).expect("utf8"));
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::data(path, format!("csv write failed: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("class{i}")).collect()
    }

    #[test]
    fn counts_land_in_truth_rows_and_prediction_columns() {
        let truth = [0, 0, 1, 2, 1, 0];
        let pred = [0, 1, 1, 2, 1, 0];
        let m = ConfusionMatrix::from_pairs(3, &truth, &pred).unwrap();
        assert_eq!(m.count(0, 0), 2);
        assert_eq!(m.count(0, 1), 1);
        assert_eq!(m.count(1, 1), 2);
        assert_eq!(m.count(2, 2), 1);
        assert_eq!(m.total(), 6);
        assert!((m.accuracy() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn metrics_match_a_brute_force_count_over_pairs() {
        // Independent oracle: count TP, FP and FN per class by scanning the
        // raw pairs, never touching the matrix.
        let classes = 4;
        let truth: Vec<usize> = (0..200).map(|i| (i * 7 + 3) % classes).collect();
        let pred: Vec<usize> = (0..200).map(|i| (i * 11 + i / 3) % classes).collect();
        let m = ConfusionMatrix::from_pairs(classes, &truth, &pred).unwrap();

        for c in 0..classes {
            let tp = truth
                .iter()
                .zip(&pred)
                .filter(|(&t, &p)| t == c && p == c)
                .count() as f64;
            let fp = truth
                .iter()
                .zip(&pred)
                .filter(|(&t, &p)| t != c && p == c)
                .count() as f64;
            let fn_ = truth
                .iter()
                .zip(&pred)
                .filter(|(&t, &p)| t == c && p != c)
                .count() as f64;
            let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            let got = m.class_metrics(c);
            assert!((got.precision - precision).abs() < 1e-15, "class {c} precision");
            assert!((got.recall - recall).abs() < 1e-15, "class {c} recall");
            assert!((got.f1 - f1).abs() < 1e-15, "class {c} f1");
            assert_eq!(got.support, (tp + fn_) as usize);
        }
    }

    #[test]
    fn degenerate_classes_get_zero_not_nan() {
        // Class 2 never occurs and is never predicted.
        let m = ConfusionMatrix::from_pairs(3, &[0, 1, 0], &[0, 0, 1]).unwrap();
        let c2 = m.class_metrics(2);
        assert_eq!((c2.precision, c2.recall, c2.f1, c2.support), (0.0, 0.0, 0.0, 0));
        // Class 1 is predicted never; precision 0, recall 0 (one miss).
        let c1 = m.class_metrics(1);
        assert_eq!(c1.support, 1);
        assert_eq!(c1.recall, 0.0);
        let report = m.report(&names(3)).unwrap();
        assert!(report.per_class.iter().all(|m| m.f1.is_finite()));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(ConfusionMatrix::from_pairs(3, &[0, 1], &[0]).is_err());
        assert!(ConfusionMatrix::from_pairs(3, &[], &[]).is_err());
        assert!(ConfusionMatrix::from_pairs(3, &[3], &[0]).is_err());
        assert!(ConfusionMatrix::from_pairs(3, &[0], &[5]).is_err());
        assert!(ConfusionMatrix::from_pairs(0, &[0], &[0]).is_err());
        let m = ConfusionMatrix::from_pairs(3, &[0], &[0]).unwrap();
        assert!(m.report(&names(2)).is_err());
    }

    #[test]
    fn csv_round_trips_exact_float_values() {
        let dir = tempfile::tempdir().unwrap();
        let truth: Vec<usize> = (0..37).map(|i| i % 3).collect();
        let pred: Vec<usize> = (0..37).map(|i| (i * 2 + 1) % 3).collect();
        let m = ConfusionMatrix::from_pairs(3, &truth, &pred).unwrap();
        let report = m.report(&names(3)).unwrap();

        let metrics_path = dir.path().join("metrics.csv");
        report.write_csv(&metrics_path).unwrap();
        let mut rdr = csv::Reader::from_path(&metrics_path).unwrap();
        assert_eq!(
            rdr.headers().unwrap(),
            &csv::StringRecord::from(vec!["class", "precision", "recall", "f1", "support"])
        );
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 5);
        for (row, m) in rows.iter().take(3).zip(&report.per_class) {
            assert_eq!(row[1].parse::<f64>().unwrap(), m.precision);
            assert_eq!(row[2].parse::<f64>().unwrap(), m.recall);
            assert_eq!(row[3].parse::<f64>().unwrap(), m.f1);
            assert_eq!(row[4].parse::<usize>().unwrap(), m.support);
        }
        assert_eq!(rows[3][0], *"macro");
        assert_eq!(rows[3][1].parse::<f64>().unwrap(), report.macro_precision);
        assert_eq!(rows[4][0], *"accuracy");
        assert_eq!(rows[4][1].parse::<f64>().unwrap(), report.accuracy);

        let confusion_path = dir.path().join("confusion.csv");
        m.write_csv(&names(3), &confusion_path).unwrap();
        let mut rdr = csv::Reader::from_path(&confusion_path).unwrap();
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 3);
        for (t, row) in rows.iter().enumerate() {
            for p in 0..3 {
                assert_eq!(row[p + 1].parse::<usize>().unwrap(), m.count(t, p));
            }
        }
    }

    #[test]
    fn vote_picks_the_modal_class_and_breaks_ties_by_probability_mass() {
        // Clear majority.
        let uniform = vec![vec![0.25; 4]; 5];
        let winner = majority_vote(&[2, 2, 1, 2, 0], &uniform, 4).unwrap();
        assert_eq!(winner, 2);

        // 2 votes each for classes 0 and 3; class 3 holds more mass.
        let probs = vec![
            vec![0.60, 0.0, 0.0, 0.40],
            vec![0.55, 0.0, 0.0, 0.45],
            vec![0.05, 0.0, 0.0, 0.95],
            vec![0.10, 0.0, 0.0, 0.90],
        ];
        let winner = majority_vote(&[0, 0, 3, 3], &probs, 4).unwrap();
        assert_eq!(winner, 3);

        // Full tie in votes and mass goes to the smaller label.
        let even = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert_eq!(majority_vote(&[1, 0], &even, 2).unwrap(), 0);

        assert!(majority_vote(&[], &[], 3).is_err());
        assert!(majority_vote(&[5], &[vec![0.5, 0.5]], 2).is_err());
        assert!(majority_vote(&[0], &[vec![1.0]], 2).is_err());
    }

    #[test]
    fn text_report_mentions_every_class_and_the_accuracy() {
        let m = ConfusionMatrix::from_pairs(2, &[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap();
        let text = m.report(&["cats".into(), "dogs".into()]).unwrap().render_text();
        assert!(text.contains("cats"));
        assert!(text.contains("dogs"));
        assert!(text.contains("macro avg"));
        assert!(text.contains("75.00%"));
    }

    proptest! {
        #[test]
        fn identities_hold_for_random_label_sets(
            pairs in prop::collection::vec((0usize..5, 0usize..5), 1..300)
        ) {
            let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let m = ConfusionMatrix::from_pairs(5, &truth, &pred).unwrap();
            let report = m.report(&names(5)).unwrap();

            // Supports partition the sample count.
            let support_sum: usize = report.per_class.iter().map(|c| c.support).sum();
            prop_assert_eq!(support_sum, pairs.len());
            prop_assert_eq!(m.total(), pairs.len());

            // Accuracy equals the fraction of equal pairs.
            let equal = pairs.iter().filter(|(t, p)| t == p).count();
            prop_assert!((report.accuracy - equal as f64 / pairs.len() as f64).abs() < 1e-12);

            for c in &report.per_class {
                prop_assert!((0.0..=1.0).contains(&c.precision));
                prop_assert!((0.0..=1.0).contains(&c.recall));
                prop_assert!((0.0..=1.0).contains(&c.f1));
                // Harmonic mean never exceeds the arithmetic mean and stays
                // between its two inputs.
                prop_assert!(c.f1 <= (c.precision + c.recall) / 2.0 + 1e-12);
                prop_assert!(c.f1 <= c.precision.max(c.recall) + 1e-12);
                if c.precision > 0.0 && c.recall > 0.0 {
                    prop_assert!(c.f1 >= c.precision.min(c.recall) - 1e-12);
                }
            }
        }
    }
}
