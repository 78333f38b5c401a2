//! Binary checkpoint format: a magic tag, the full run configuration as
//! text, flat little-endian parameter and optimizer buffers, the training
//! history, and a CRC32 trailer over everything before it.

use super::history::HistoryRow;
use super::optimizer::AdamState;
use crate::error::{Error, Result};
use crate::model::EavitModel;
use crate::tensor::Element;
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"EAVT";
const VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run, with parameters and
/// moments flattened in the model's canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Element> {
    pub config_text: String,
    /// Completed epochs.
    pub epoch: u32,
    pub params: Vec<T>,
    pub opt_m: Vec<T>,
    pub opt_v: Vec<T>,
    pub opt_step: u64,
    pub history: Vec<HistoryRow>,
}

impl<T: Element> EavitModel<T> {
    /// All parameters concatenated in canonical order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat buffer in canonical order.
    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter buffer holds {} scalars, model needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for i in 0..self.params.len() {
            let n = self.params[i].shape.numel();
            self.param_data_mut(i).copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

impl<T: Element> AdamState<T> {
    fn flat(buffers: &[Vec<T>]) -> Vec<T> {
        buffers.iter().flat_map(|b| b.iter().copied()).collect()
    }

    fn unflatten(model: &EavitModel<T>, flat: &[T]) -> Result<Vec<Vec<T>>> {
        if flat.len() != model.param_count() {
            return Err(Error::Checkpoint(format!(
                "optimizer buffer holds {} scalars, model needs {}",
                flat.len(),
                model.param_count()
            )));
        }
        let mut out = Vec::with_capacity(model.params.len());
        let mut offset = 0;
        for p in &model.params {
            let n = p.shape.numel();
            out.push(flat[offset..offset + n].to_vec());
            offset += n;
        }
        Ok(out)
    }

    /// Rebuilds moment buffers from a checkpoint's flat vectors.
    pub fn from_flat(model: &EavitModel<T>, m: &[T], v: &[T], step: u64) -> Result<Self> {
        Ok(AdamState { m: Self::unflatten(model, m)?, v: Self::unflatten(model, v)?, step })
    }
}

fn write_scalars<T: Element>(out: &mut Vec<u8>, scalars: &[T]) {
    for s in scalars {
        s.write_le(out);
    }
}

pub fn save_checkpoint<T: Element>(
    path: &Path,
    config_text: &str,
    epoch: u32,
    model: &EavitModel<T>,
    state: &AdamState<T>,
    history: &[HistoryRow],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let config = config_text.as_bytes();
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config);
    buf.extend_from_slice(&epoch.to_le_bytes());
    buf.extend_from_slice(&state.step.to_le_bytes());
    let params = model.flat_params();
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    buf.push(T::BYTES as u8);
    write_scalars(&mut buf, &params);
    write_scalars(&mut buf, &AdamState::flat(&state.m));
    write_scalars(&mut buf, &AdamState::flat(&state.v));
    buf.extend_from_slice(&(history.len() as u32).to_le_bytes());
    for row in history {
        buf.extend_from_slice(&row.epoch.to_le_bytes());
        for v in [row.train_loss, row.train_acc, row.val_loss, row.val_acc] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&buf);
    buf.extend_from_slice(&hasher.finalize().to_le_bytes());
    std::fs::write(path, &buf).map_err(|e| Error::Io(path.to_path_buf(), e))
}

/// Cursor over the checkpoint bytes with bounds-checked reads.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated (wanted {} bytes at offset {}, file has {})",
                self.path.display(),
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn scalars<T: Element>(&mut self, count: usize) -> Result<Vec<T>> {
        let raw = self.take(count * T::BYTES)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}

fn read_validated(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Io(path.to_path_buf(), e))?;
    if bytes.len() < 12 + 4 {
        return Err(Error::Checkpoint(format!("{}: too short to be a checkpoint", path.display())));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(body);
    if hasher.finalize() != stored {
        return Err(Error::Checkpoint(format!(
            "{}: checksum mismatch, file is corrupt",
            path.display()
        )));
    }
    bytes.truncate(bytes.len() - 4);
    Ok(bytes)
}

fn read_preamble<'a>(r: &mut Reader<'a>) -> Result<String> {
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint (bad magic {:02x?})",
            r.path.display(),
            magic
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: version {} not supported (expected {})",
            r.path.display(),
            version,
            VERSION
        )));
    }
    let len = r.u32()? as usize;
    let text = r.take(len)?;
    String::from_utf8(text.to_vec())
        .map_err(|_| Error::Checkpoint(format!("{}: config text is not UTF-8", r.path.display())))
}

/// Reads only the embedded configuration text, verifying the checksum.
/// Used to pick the numeric precision before a typed load.
pub fn peek_config(path: &Path) -> Result<String> {
    let bytes = read_validated(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    read_preamble(&mut r)
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = read_validated(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    let config_text = read_preamble(&mut r)?;
    let epoch = r.u32()?;
    let opt_step = r.u64()?;
    let count = r.u64()? as usize;
    let elem = r.take(1)?[0] as usize;
    if elem != T::BYTES {
        return Err(Error::Checkpoint(format!(
            "{}: stores {}-byte scalars but a {}-byte load was requested",
            path.display(),
            elem,
            T::BYTES
        )));
    }
    let params = r.scalars::<T>(count)?;
    let opt_m = r.scalars::<T>(count)?;
    let opt_v = r.scalars::<T>(count)?;
    let rows = r.u32()? as usize;
    let mut history = Vec::with_capacity(rows);
    for _ in 0..rows {
        history.push(HistoryRow {
            epoch: r.u32()?,
            train_loss: r.f64()?,
            train_acc: r.f64()?,
            val_loss: r.f64()?,
            val_acc: r.f64()?,
        });
    }
    if r.pos != r.bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} unexpected trailing bytes",
            path.display(),
            r.bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { config_text, epoch, params, opt_m, opt_v, opt_step, history })
}

/// Writes bytes to `path` atomically enough for our purposes: a temp file
/// in the same directory renamed over the target, so an interrupted save
/// never leaves a half-written checkpoint behind.
pub fn save_checkpoint_atomic<T: Element>(
    path: &Path,
    config_text: &str,
    epoch: u32,
    model: &EavitModel<T>,
    state: &AdamState<T>,
    history: &[HistoryRow],
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    save_checkpoint(&tmp, config_text, epoch, model, state, history)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::Io(path.to_path_buf(), e))
}
