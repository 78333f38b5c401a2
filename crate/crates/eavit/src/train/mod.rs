//! Training loop: one define-by-run graph per sample over shared
//! parameters, deterministic batch accumulation, decoupled-decay Adam
//! updates, per-epoch checkpoints and history.

mod checkpoint;
mod dataset;
mod history;
mod optimizer;

pub use checkpoint::{
    load_checkpoint, peek_config, save_checkpoint, save_checkpoint_atomic, Checkpoint,
};
pub use dataset::{LoadedDataset, Split, SplitMode};
pub use history::{read_history_csv, write_history_csv, HistoryRow};
pub use optimizer::{AdamState, AdamW};

use crate::dsp::MelImage;
use crate::error::{Error, Result};
use crate::model::EavitModel;
use crate::tensor::{Element, Graph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: u32,
    pub batch_size: usize,
    pub optimizer: AdamW,
    pub seed: u64,
    /// Force sequential sample processing. Results are identical either
    /// way; this only removes scheduling nondeterminism in timing.
    pub reproducible: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 30,
            batch_size: 16,
            optimizer: AdamW::default(),
            seed: 42,
            reproducible: false,
        }
    }
}

/// Runs items through `f`, in parallel when the feature and the flag allow
/// it. Output order always matches input order, so downstream reductions
/// are deterministic regardless of thread count.
fn map_samples<F, R>(items: &[usize], sequential: bool, f: F) -> Result<Vec<R>>
where
    F: Fn(usize) -> Result<R> + Sync,
    R: Send,
{
    #[cfg(feature = "parallel")]
    {
        if !sequential {
            return items.par_iter().map(|&i| f(i)).collect();
        }
    }
    let _ = sequential;
    items.iter().map(|&i| f(i)).collect()
}

/// Forward and backward for one labelled image. Returns the loss, whether
/// the argmax was right, and per-parameter gradients in canonical order.
fn train_sample<T: Element>(
    model: &EavitModel<T>,
    image: &MelImage,
    label: usize,
) -> Result<(f64, bool, Vec<Vec<T>>)> {
    let mut g = Graph::<T>::new();
    let bound = model.bind(&mut g, true)?;
    let logits = model.forward_image(&mut g, &bound, image)?;
    let loss = g.cross_entropy(logits, label)?;
    g.backward(loss)?;
    let loss_value = g.value(loss)[0].as_f64();
    let predicted = argmax(g.value(logits));
    let grads = (0..model.params.len())
        .map(|i| {
            g.grad(bound.id(i))
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![T::zero(); model.params[i].shape.numel()])
        })
        .collect();
    Ok((loss_value, predicted == label, grads))
}

/// Forward-only pass returning raw logits as f64.
pub fn predict_logits<T: Element>(model: &EavitModel<T>, image: &MelImage) -> Result<Vec<f64>> {
    let mut g = Graph::<T>::new();
    let bound = model.bind(&mut g, false)?;
    let logits = model.forward_image(&mut g, &bound, image)?;
    Ok(g.value(logits).iter().map(|v| v.as_f64()).collect())
}

pub fn argmax<T: PartialOrd>(values: &[T]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax in f64, for reporting probabilities.
pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / denom).collect()
}

/// Cross entropy of f64 logits against a label, via log-sum-exp.
pub fn cross_entropy_f64(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Prediction for one sample: argmax label, probabilities and loss.
pub struct Prediction {
    pub predicted: usize,
    pub probs: Vec<f64>,
    pub loss: f64,
}

/// Forward-only predictions over a set of dataset indices, in order.
pub fn predictions<T: Element>(
    model: &EavitModel<T>,
    data: &LoadedDataset,
    indices: &[usize],
    sequential: bool,
) -> Result<Vec<Prediction>> {
    map_samples(indices, sequential, |i| {
        let logits = predict_logits(model, &data.images[i])?;
        Ok(Prediction {
            predicted: argmax(&logits),
            probs: softmax_probs(&logits),
            loss: cross_entropy_f64(&logits, data.labels[i]),
        })
    })
}

/// Mean loss and accuracy over a set of dataset indices.
pub fn evaluate<T: Element>(
    model: &EavitModel<T>,
    data: &LoadedDataset,
    indices: &[usize],
    sequential: bool,
) -> Result<(f64, f64)> {
    let preds = predictions(model, data, indices, sequential)?;
    let loss: f64 = preds.iter().map(|p| p.loss).sum::<f64>() / preds.len() as f64;
    let correct = preds
        .iter()
        .zip(indices)
        .filter(|(p, &i)| p.predicted == data.labels[i])
        .count();
    Ok((loss, correct as f64 / preds.len() as f64))
}

/// Trains in place, appending one `HistoryRow` per epoch and invoking
/// `on_epoch` after each with the history so far (for checkpointing and
/// progress output).
///
/// Epoch shuffles draw from a stream derived from the master seed and the
/// absolute epoch number, so a resumed run sees exactly the same batch
/// sequence as an uninterrupted one.
pub fn run_training<T: Element>(
    model: &mut EavitModel<T>,
    data: &LoadedDataset,
    split: &Split,
    settings: &TrainSettings,
    state: &mut AdamState<T>,
    history: &mut Vec<HistoryRow>,
    mut on_epoch: impl FnMut(&[HistoryRow], &EavitModel<T>, &AdamState<T>) -> Result<()>,
) -> Result<()> {
    if settings.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if split.train.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let start = history.last().map(|r| r.epoch).unwrap_or(0);
    for epoch in start..settings.epochs {
        let mut order = split.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(u64::from(epoch) + 1);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(settings.batch_size) {
            let results = map_samples(batch, settings.reproducible, |i| {
                train_sample(model, &data.images[i], data.labels[i])
            })?;

            let mut grads: Vec<Vec<T>> =
                model.params.iter().map(|p| vec![T::zero(); p.shape.numel()]).collect();
            let mut batch_loss = 0.0;
            for (loss, ok, sample_grads) in results {
                batch_loss += loss;
                correct += ok as usize;
                for (acc, g) in grads.iter_mut().zip(&sample_grads) {
                    for (a, &v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss became non-finite in epoch {}",
                    epoch + 1
                )));
            }
            loss_sum += batch_loss;
            let inv = T::from_f64c(1.0 / batch.len() as f64);
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            settings.optimizer.step(model, &grads, state)?;
        }

        let train_loss = loss_sum / order.len() as f64;
        let train_acc = correct as f64 / order.len() as f64;
        let (val_loss, val_acc) = if split.val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            evaluate(model, data, &split.val, settings.reproducible)?
        };
        let row = HistoryRow { epoch: epoch + 1, train_loss, train_acc, val_loss, val_acc };
        history.push(row);
        on_epoch(history, model, state)?;
    }
    Ok(())
}
