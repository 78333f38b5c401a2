//! Command line front end: dataset preprocessing, training, evaluation,
//! single-file prediction and attention timing. Each subcommand is a thin
//! wrapper over the library; all heavy lifting lives there.

use clap::{Parser, Subcommand, ValueEnum};
use eavit::bench::scan_token_counts;
use eavit::config::{Config, Precision};
use eavit::dsp::{load_wav, preprocess_dataset, segment, segment_to_image, MelFilterBank};
use eavit::error::{Error, Result};
use eavit::eval::{
    confusion_heatmap_svg, line_chart_svg, majority_vote, stack_svgs_vertically, ConfusionMatrix,
    Series, CHART_HEIGHT, CHART_WIDTH,
};
use eavit::model::{AttentionKind, EavitModel};
use eavit::tensor::Element;
use eavit::train::{
    argmax, load_checkpoint, peek_config, predict_logits, predictions, run_training,
    save_checkpoint_atomic, softmax_probs, write_history_csv, AdamState, Checkpoint, HistoryRow,
    LoadedDataset, Split,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "eavit", version, about = "Audio genre classification with an external-attention vision transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a tree of genre-labelled WAV files into mel-spectrogram images
    Preprocess {
        /// Directory with one subdirectory of .wav files per genre
        root: PathBuf,
        /// Output directory for images/, manifest.csv and classes.txt
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// Configuration file of key = value lines
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one configuration key, e.g. --set n_mels=64
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train a model on a preprocessed dataset
    Train {
        /// Manifest written by preprocess
        #[arg(default_value = "data/manifest.csv")]
        manifest: PathBuf,
        /// Output directory for checkpoint.bin, history.csv and curves.svg
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Configuration file of key = value lines
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one configuration key, e.g. --set lr=1e-4
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Shorthand for --set seed=N
        #[arg(long)]
        seed: Option<u64>,
        /// Process samples sequentially for scheduling-independent timing
        #[arg(long)]
        reproducible: bool,
        /// Resume from this checkpoint instead of initializing fresh weights
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a trained checkpoint against a preprocessed dataset
    Eval {
        /// Manifest written by preprocess
        manifest: PathBuf,
        /// Checkpoint written by train
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for metrics.csv, confusion.csv and confusion.svg
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        /// Which samples to score
        #[arg(long, value_enum, default_value_t = EvalSplit::Val)]
        split: EvalSplit,
        /// Aggregate segment predictions into one majority vote per track
        #[arg(long)]
        track_vote: bool,
        /// Override one configuration key, e.g. --set val_fraction=0.1
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Classify WAV files with a trained checkpoint
    Predict {
        /// WAV files to classify
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
        /// Checkpoint written by train
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Time external and self attention across token counts
    BenchAttn {
        /// Output CSV of kind,tokens,median_ms rows
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
        /// Configuration file of key = value lines
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one configuration key, e.g. --set dim=64
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Token counts to measure
        #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256, 512])]
        tokens: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalSplit {
    Val,
    Train,
    All,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_threads();
    let result = match cli.command {
        Command::Preprocess { root, out, config, set } => {
            cmd_preprocess(&root, &out, config.as_deref(), &set)
        }
        Command::Train { manifest, out, config, set, seed, reproducible, checkpoint } => {
            cmd_train(&manifest, &out, config.as_deref(), &set, seed, reproducible, checkpoint.as_deref())
        }
        Command::Eval { manifest, checkpoint, out, split, track_vote, set } => {
            cmd_eval(&manifest, &checkpoint, &out, split, track_vote, &set)
        }
        Command::Predict { wavs, checkpoint } => cmd_predict(&wavs, &checkpoint),
        Command::BenchAttn { out, config, set, tokens } => {
            cmd_bench(&out, config.as_deref(), &set, &tokens)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Sizes the worker pool from EAVIT_THREADS when the parallel feature is
/// compiled in. Invalid or absent values keep the library default.
fn init_threads() {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("EAVIT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn load_config(file: Option<&Path>, sets: &[String]) -> Result<Config> {
    let mut cfg = match file {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    apply_sets(&mut cfg, sets)?;
    Ok(cfg)
}

fn apply_sets(cfg: &mut Config, sets: &[String]) -> Result<()> {
    for s in sets {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{s}'")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(path.to_path_buf(), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io(path.to_path_buf(), e))
}

fn cmd_preprocess(root: &Path, out: &Path, config: Option<&Path>, sets: &[String]) -> Result<()> {
    let cfg = load_config(config, sets)?;
    let report = preprocess_dataset(root, &cfg.dsp(), (cfg.image_size, cfg.image_size), out)?;
    println!(
        "{} classes, {} segments, manifest at {}",
        report.classes.len(),
        report.entries,
        report.manifest_path.display()
    );
    if !report.skipped.is_empty() {
        for (path, reason) in &report.skipped {
            eprintln!("skipped {}: {reason}", path.display());
        }
        return Err(Error::Dataset(format!(
            "{} file(s) could not be processed",
            report.skipped.len()
        )));
    }
    Ok(())
}

fn cmd_train(
    manifest: &Path,
    out: &Path,
    config_file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    reproducible: bool,
    resume: Option<&Path>,
) -> Result<()> {
    // A resumed run starts from the checkpointed configuration so the model
    // shape always matches the stored parameters; overrides still apply.
    let mut cfg = match resume {
        Some(path) => Config::parse_text(&peek_config(path)?)?,
        None => match config_file {
            Some(path) => Config::from_file(path)?,
            None => Config::default(),
        },
    };
    apply_sets(&mut cfg, sets)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }

    let data = LoadedDataset::from_manifest(manifest)?;
    if cfg.class_names.is_empty() {
        cfg.class_names = data.class_names.clone();
    } else if cfg.class_names != data.class_names {
        return Err(Error::Dataset(format!(
            "configured classes [{}] do not match dataset classes [{}]",
            cfg.class_names.join(","),
            data.class_names.join(",")
        )));
    }
    if cfg.class_names.len() != cfg.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model is configured for {}; pass --set classes={}",
            cfg.class_names.len(),
            cfg.classes,
            cfg.class_names.len()
        )));
    }
    if let Some(img) = data.images.first() {
        if img.width != cfg.image_size || img.height != cfg.image_size {
            return Err(Error::Dataset(format!(
                "manifest images are {}x{} but the model expects {2}x{2}; \
                 re-run preprocess with image_size = {2}",
                img.width, img.height, cfg.image_size
            )));
        }
    }

    let split = data.split(cfg.split, cfg.val_fraction, cfg.seed)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(&cfg, &data, &split, out, reproducible, resume),
        Precision::F64 => train_typed::<f64>(&cfg, &data, &split, out, reproducible, resume),
    }
}

fn train_typed<T: Element>(
    cfg: &Config,
    data: &LoadedDataset,
    split: &Split,
    out: &Path,
    reproducible: bool,
    resume: Option<&Path>,
) -> Result<()> {
    let settings = cfg.train_settings(reproducible);
    let (mut model, mut state, mut history) = match resume {
        Some(path) => {
            let ckpt: Checkpoint<T> = load_checkpoint(path)?;
            let mut model = EavitModel::<T>::init(cfg.model()?, cfg.seed)?;
            model.set_flat_params(&ckpt.params)?;
            let state = AdamState::from_flat(&model, &ckpt.opt_m, &ckpt.opt_v, ckpt.opt_step)?;
            println!("resuming from {} after epoch {}", path.display(), ckpt.epoch);
            (model, state, ckpt.history)
        }
        None => {
            let model = EavitModel::<T>::init(cfg.model()?, cfg.seed)?;
            let state = AdamState::new(&model);
            (model, state, Vec::new())
        }
    };

    ensure_dir(out)?;
    let ckpt_path = out.join("checkpoint.bin");
    let config_text = cfg.to_text();
    println!(
        "{} parameters, {} train / {} val samples, epochs {}..{}",
        model.param_count(),
        split.train.len(),
        split.val.len(),
        history.last().map(|r| r.epoch).unwrap_or(0),
        settings.epochs
    );

    run_training(&mut model, data, split, &settings, &mut state, &mut history, |rows, model, state| {
        let row = rows.last().expect("history has the epoch just finished");
        println!(
            "epoch {:>3}  train loss {:.4}  acc {:.4}  val loss {:.4}  acc {:.4}",
            row.epoch, row.train_loss, row.train_acc, row.val_loss, row.val_acc
        );
        save_checkpoint_atomic(&ckpt_path, &config_text, row.epoch, model, state, rows)
    })?;

    if history.is_empty() {
        println!("no epochs to run");
        return Ok(());
    }
    write_history_csv(&history, &out.join("history.csv"))?;
    write_text(&out.join("curves.svg"), &curves_svg(&history))?;
    println!("wrote {}, history.csv and curves.svg", ckpt_path.display());
    Ok(())
}

/// Two stacked line charts: losses on top, accuracies below.
fn curves_svg(history: &[HistoryRow]) -> String {
    let train_loss: Vec<f64> = history.iter().map(|r| r.train_loss).collect();
    let val_loss: Vec<f64> = history.iter().map(|r| r.val_loss).collect();
    let train_acc: Vec<f64> = history.iter().map(|r| r.train_acc).collect();
    let val_acc: Vec<f64> = history.iter().map(|r| r.val_acc).collect();
    let loss = line_chart_svg(
        "loss per epoch",
        "loss",
        &[
            Series { label: "train", values: &train_loss },
            Series { label: "val", values: &val_loss },
        ],
    );
    let acc = line_chart_svg(
        "accuracy per epoch",
        "accuracy",
        &[
            Series { label: "train", values: &train_acc },
            Series { label: "val", values: &val_acc },
        ],
    );
    stack_svgs_vertically(&[&loss, &acc], CHART_WIDTH, CHART_HEIGHT)
}

fn cmd_eval(
    manifest: &Path,
    checkpoint: &Path,
    out: &Path,
    split: EvalSplit,
    track_vote: bool,
    sets: &[String],
) -> Result<()> {
    let mut cfg = Config::parse_text(&peek_config(checkpoint)?)?;
    apply_sets(&mut cfg, sets)?;
    match cfg.precision {
        Precision::F32 => eval_typed::<f32>(&cfg, manifest, checkpoint, out, split, track_vote),
        Precision::F64 => eval_typed::<f64>(&cfg, manifest, checkpoint, out, split, track_vote),
    }
}

fn eval_typed<T: Element>(
    cfg: &Config,
    manifest: &Path,
    checkpoint: &Path,
    out: &Path,
    split: EvalSplit,
    track_vote: bool,
) -> Result<()> {
    let ckpt: Checkpoint<T> = load_checkpoint(checkpoint)?;
    let mut model = EavitModel::<T>::init(cfg.model()?, cfg.seed)?;
    model.set_flat_params(&ckpt.params)?;

    let data = LoadedDataset::from_manifest(manifest)?;
    if !cfg.class_names.is_empty() && cfg.class_names != data.class_names {
        return Err(Error::Dataset(format!(
            "checkpoint classes [{}] do not match dataset classes [{}]",
            cfg.class_names.join(","),
            data.class_names.join(",")
        )));
    }
    let class_names =
        if cfg.class_names.is_empty() { &data.class_names } else { &cfg.class_names };

    let indices: Vec<usize> = match split {
        EvalSplit::All => (0..data.images.len()).collect(),
        EvalSplit::Train => data.split(cfg.split, cfg.val_fraction, cfg.seed)?.train,
        EvalSplit::Val => data.split(cfg.split, cfg.val_fraction, cfg.seed)?.val,
    };
    if indices.is_empty() {
        return Err(Error::Dataset("the selected split contains no samples".into()));
    }

    let preds = predictions(&model, &data, &indices, false)?;
    let mean_loss = preds.iter().map(|p| p.loss).sum::<f64>() / preds.len() as f64;

    let (truth, predicted) = if track_vote {
        // Positions into `preds` grouped by source track; every segment of a
        // track shares its label, so the first one supplies the truth.
        let mut by_track: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (pos, &i) in indices.iter().enumerate() {
            by_track.entry(data.track_ids[i].as_str()).or_default().push(pos);
        }
        let mut truth = Vec::with_capacity(by_track.len());
        let mut predicted = Vec::with_capacity(by_track.len());
        for positions in by_track.values() {
            let labels: Vec<usize> = positions.iter().map(|&p| preds[p].predicted).collect();
            let probs: Vec<Vec<f64>> = positions.iter().map(|&p| preds[p].probs.clone()).collect();
            predicted.push(majority_vote(&labels, &probs, class_names.len())?);
            truth.push(data.labels[indices[positions[0]]]);
        }
        (truth, predicted)
    } else {
        (
            indices.iter().map(|&i| data.labels[i]).collect(),
            preds.iter().map(|p| p.predicted).collect(),
        )
    };

    let matrix = ConfusionMatrix::from_pairs(class_names.len(), &truth, &predicted)?;
    let report = matrix.report(class_names)?;

    ensure_dir(out)?;
    report.write_csv(&out.join("metrics.csv"))?;
    matrix.write_csv(class_names, &out.join("confusion.csv"))?;
    write_text(&out.join("confusion.svg"), &confusion_heatmap_svg(&matrix, class_names))?;

    print!("{}", report.render_text());
    if track_vote {
        println!("majority vote over {} segments in {} tracks", preds.len(), truth.len());
    }
    println!("mean cross-entropy {mean_loss:.4} per segment");
    println!("wrote metrics.csv, confusion.csv and confusion.svg to {}", out.display());
    Ok(())
}

fn cmd_predict(wavs: &[PathBuf], checkpoint: &Path) -> Result<()> {
    let cfg = Config::parse_text(&peek_config(checkpoint)?)?;
    match cfg.precision {
        Precision::F32 => predict_typed::<f32>(&cfg, wavs, checkpoint),
        Precision::F64 => predict_typed::<f64>(&cfg, wavs, checkpoint),
    }
}

fn predict_typed<T: Element>(cfg: &Config, wavs: &[PathBuf], checkpoint: &Path) -> Result<()> {
    if cfg.class_names.is_empty() {
        return Err(Error::Checkpoint(
            "checkpoint carries no class names; train one from a preprocessed dataset first"
                .into(),
        ));
    }
    let ckpt: Checkpoint<T> = load_checkpoint(checkpoint)?;
    let mut model = EavitModel::<T>::init(cfg.model()?, cfg.seed)?;
    model.set_flat_params(&ckpt.params)?;

    let names = &cfg.class_names;
    let dsp = cfg.dsp();
    let bank = MelFilterBank::new(dsp.n_mels, dsp.n_fft, dsp.sample_rate, dsp.fmin, dsp.fmax_hz())?;

    for path in wavs {
        let clip = load_wav(path)?;
        if clip.sample_rate != dsp.sample_rate {
            return Err(Error::data(
                path.clone(),
                format!(
                    "sample rate {} Hz does not match the model's {} Hz",
                    clip.sample_rate, dsp.sample_rate
                ),
            ));
        }
        let segments = segment(&clip, dsp.segment_seconds)?;
        let mut seg_labels = Vec::with_capacity(segments.len());
        let mut seg_probs = Vec::with_capacity(segments.len());
        for seg in &segments {
            let image = segment_to_image(seg, &dsp, &bank, cfg.image_size, cfg.image_size)?;
            let logits = predict_logits(&model, &image)?;
            let probs = softmax_probs(&logits);
            let label = argmax(&logits);
            println!(
                "{} segment {:>3}: {} ({:.1}%)",
                path.display(),
                seg.index,
                names[label],
                probs[label] * 100.0
            );
            seg_labels.push(label);
            seg_probs.push(probs);
        }
        let vote = majority_vote(&seg_labels, &seg_probs, names.len())?;
        let agreeing = seg_labels.iter().filter(|&&l| l == vote).count();
        println!(
            "{}: {} ({agreeing} of {} segments)",
            path.display(),
            names[vote],
            seg_labels.len()
        );
    }
    Ok(())
}

fn cmd_bench(out: &Path, config: Option<&Path>, sets: &[String], tokens: &[usize]) -> Result<()> {
    const RUNS: usize = 5;
    let cfg = load_config(config, sets)?;
    if tokens.is_empty() || tokens.contains(&0) {
        return Err(Error::Usage("--tokens needs at least one positive count".into()));
    }
    if cfg.dim % cfg.heads != 0 {
        return Err(Error::Config(format!(
            "dim {} is not divisible by heads {}",
            cfg.dim, cfg.heads
        )));
    }
    println!(
        "timing attention at dim {} with {} heads and {} memory slots, {RUNS} runs per point",
        cfg.dim, cfg.heads, cfg.memory_size
    );

    let points = scan_token_counts(tokens, cfg.dim, cfg.heads, cfg.memory_size, RUNS, cfg.seed);
    let mut w = csv::Writer::from_path(out)
        .map_err(|e| Error::data(out, format!("cannot write csv: {e}")))?;
    w.write_record(["kind", "tokens", "median_ms"])
        .map_err(|e| Error::data(out, format!("cannot write csv: {e}")))?;
    for p in &points {
        let kind = match p.kind {
            AttentionKind::External => "external",
            AttentionKind::SelfAttention => "self",
        };
        w.write_record([kind, &p.tokens.to_string(), &p.median_ms.to_string()])
            .map_err(|e| Error::data(out, format!("cannot write csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Io(out.to_path_buf(), e))?;

    let (external, slf) = points.split_at(tokens.len());
    for (e, s) in external.iter().zip(slf) {
        println!(
            "tokens {:>6}: external {:.3} ms, self {:.3} ms, self/external {:.2}x",
            e.tokens,
            e.median_ms,
            s.median_ms,
            s.median_ms / e.median_ms
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
