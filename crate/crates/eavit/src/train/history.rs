//! Per-epoch training history and its CSV form.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    /// 1-based epoch number.
    pub epoch: u32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub fn write_history_csv(rows: &[HistoryRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Dataset("no history rows to write".into()));
    }
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::data(path, format!("csv write failed: {e}")))?;
    w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        .map_err(|e| Error::data(path, format!("csv write failed: {e}")))?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.val_loss.to_string(),
            r.val_acc.to_string(),
        ])
        .map_err(|e| Error::data(path, format!("csv write failed: {e}")))?;
    }
    w.flush().map_err(|e| Error::Io(path.to_path_buf(), e))?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::data(path, format!("csv read failed: {e}")))?;
    let expected = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"];
    let headers = rdr.headers().map_err(|e| Error::data(path, e.to_string()))?;
    if headers != expected.as_slice() {
        return Err(Error::data(path, format!("unexpected history header {headers:?}")));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(path, e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::data(path, format!("bad history row {record:?}")))
        };
        rows.push(HistoryRow {
            epoch: field(0)? as u32,
            train_loss: field(1)?,
            train_acc: field(2)?,
            val_loss: field(3)?,
            val_acc: field(4)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let rows = vec![
            HistoryRow { epoch: 1, train_loss: 2.25, train_acc: 0.1, val_loss: 2.3, val_acc: 0.125 },
            HistoryRow { epoch: 2, train_loss: 1.7, train_acc: 0.4, val_loss: 1.9, val_acc: 0.375 },
        ];
        write_history_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
        let back = read_history_csv(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn empty_history_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_history_csv(&[], &dir.path().join("h.csv")).is_err());
    }
}
