//! Flat `key = value` run configuration: defaults, file parsing, command
//! line overrides, and the canonical text form embedded in checkpoints.

use crate::dsp::{DspConfig, Window};
use crate::error::{Error, Result};
use crate::model::{AttentionKind, ModelConfig};
use crate::train::{AdamW, SplitMode, TrainSettings};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Every tunable of the pipeline in one flat struct. Unknown keys are
/// rejected so typos never silently fall back to defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // Audio front end.
    pub sample_rate: u32,
    pub segment_seconds: f64,
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub n_mels: usize,
    pub fmin: f64,
    /// `None` means the Nyquist frequency.
    pub fmax: Option<f64>,
    pub top_db: f64,
    // Model.
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub memory_size: usize,
    pub mlp_hidden: usize,
    pub head_hidden: Vec<usize>,
    pub classes: usize,
    pub attention: AttentionKind,
    // Training.
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub val_fraction: f64,
    pub split: SplitMode,
    pub seed: u64,
    pub precision: Precision,
    /// Class names in label order; filled by preprocessing or training.
    pub class_names: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        let dsp = DspConfig::default();
        let model = ModelConfig::default();
        let train = TrainSettings::default();
        let adam = AdamW::default();
        Config {
            sample_rate: dsp.sample_rate,
            segment_seconds: dsp.segment_seconds,
            n_fft: dsp.n_fft,
            hop: dsp.hop,
            window: dsp.window,
            n_mels: dsp.n_mels,
            fmin: dsp.fmin,
            fmax: dsp.fmax,
            top_db: dsp.top_db,
            image_size: model.image_size,
            patch_size: model.patch_size,
            channels: model.channels,
            dim: model.dim,
            layers: model.layers,
            heads: model.heads,
            memory_size: model.memory_size,
            mlp_hidden: model.mlp_hidden,
            head_hidden: model.head_hidden,
            classes: model.classes,
            attention: model.attention,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            val_fraction: 0.2,
            split: SplitMode::Track,
            seed: train.seed,
            precision: Precision::F32,
            class_names: Vec::new(),
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl Config {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        match key {
            "sample_rate" => self.sample_rate = parse_as(key, value)?,
            "segment_seconds" => self.segment_seconds = parse_as(key, value)?,
            "n_fft" => self.n_fft = parse_as(key, value)?,
            "hop" => self.hop = parse_as(key, value)?,
            "window" => {
                self.window = match value {
                    "hann" => Window::Hann,
                    "rectangular" => Window::Rectangular,
                    other => {
                        return Err(Error::Config(format!(
                            "window: '{other}' is not hann or rectangular"
                        )))
                    }
                }
            }
            "n_mels" => self.n_mels = parse_as(key, value)?,
            "fmin" => self.fmin = parse_as(key, value)?,
            "fmax" => {
                self.fmax =
                    if value == "nyquist" { None } else { Some(parse_as(key, value)?) }
            }
            "top_db" => self.top_db = parse_as(key, value)?,
            "image_size" => self.image_size = parse_as(key, value)?,
            "patch_size" => self.patch_size = parse_as(key, value)?,
            "channels" => self.channels = parse_as(key, value)?,
            "dim" => self.dim = parse_as(key, value)?,
            "layers" => self.layers = parse_as(key, value)?,
            "heads" => self.heads = parse_as(key, value)?,
            "memory_size" => self.memory_size = parse_as(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse_as(key, value)?,
            "head_hidden" => {
                self.head_hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse_as(key, v))
                        .collect::<Result<Vec<usize>>>()?
                }
            }
            "classes" => self.classes = parse_as(key, value)?,
            "attention" => {
                self.attention = match value {
                    "external" => AttentionKind::External,
                    "self" => AttentionKind::SelfAttention,
                    other => {
                        return Err(Error::Config(format!(
                            "attention: '{other}' is not external or self"
                        )))
                    }
                }
            }
            "epochs" => self.epochs = parse_as(key, value)?,
            "batch_size" => self.batch_size = parse_as(key, value)?,
            "lr" => self.lr = parse_as(key, value)?,
            "weight_decay" => self.weight_decay = parse_as(key, value)?,
            "beta1" => self.beta1 = parse_as(key, value)?,
            "beta2" => self.beta2 = parse_as(key, value)?,
            "adam_eps" => self.adam_eps = parse_as(key, value)?,
            "val_fraction" => self.val_fraction = parse_as(key, value)?,
            "split" => {
                self.split = match value {
                    "track" => SplitMode::Track,
                    "segment" => SplitMode::Segment,
                    other => {
                        return Err(Error::Config(format!(
                            "split: '{other}' is not track or segment"
                        )))
                    }
                }
            }
            "seed" => self.seed = parse_as(key, value)?,
            "precision" => {
                self.precision = match value {
                    "32" => Precision::F32,
                    "64" => Precision::F64,
                    other => {
                        return Err(Error::Config(format!("precision: '{other}' is not 32 or 64")))
                    }
                }
            }
            "class_names" => {
                self.class_names = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|v| v.trim().to_string()).collect()
                }
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses the flat text form. Later assignments win, `#` starts a
    /// comment, blank lines are skipped.
    pub fn parse_text(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    /// Applies assignments from `text` on top of the current values.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{line}'", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Io(path.to_path_buf(), e))?;
        Config::parse_text(&text)
    }

    /// Canonical text form: every key, fixed order, one per line. Parsing
    /// it back yields an equal configuration.
    pub fn to_text(&self) -> String {
        let fmax = match self.fmax {
            None => "nyquist".to_string(),
            Some(v) => v.to_string(),
        };
        let head_hidden =
            self.head_hidden.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let window = match self.window {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        };
        let attention = match self.attention {
            AttentionKind::External => "external",
            AttentionKind::SelfAttention => "self",
        };
        let split = match self.split {
            SplitMode::Track => "track",
            SplitMode::Segment => "segment",
        };
        let precision = match self.precision {
            Precision::F32 => "32",
            Precision::F64 => "64",
        };
        format!(
            "sample_rate = {}\nsegment_seconds = {}\nn_fft = {}\nhop = {}\nwindow = {}\n\
             n_mels = {}\nfmin = {}\nfmax = {}\ntop_db = {}\nimage_size = {}\npatch_size = {}\n\
             channels = {}\ndim = {}\nlayers = {}\nheads = {}\nmemory_size = {}\nmlp_hidden = {}\n\
             head_hidden = {}\nclasses = {}\nattention = {}\nepochs = {}\nbatch_size = {}\n\
             lr = {}\nweight_decay = {}\nbeta1 = {}\nbeta2 = {}\nadam_eps = {}\n\
             val_fraction = {}\nsplit = {}\nseed = {}\nprecision = {}\nclass_names = {}\n",
            self.sample_rate,
            self.segment_seconds,
            self.n_fft,
            self.hop,
            window,
            self.n_mels,
            self.fmin,
            fmax,
            self.top_db,
            self.image_size,
            self.patch_size,
            self.channels,
            self.dim,
            self.layers,
            self.heads,
            self.memory_size,
            self.mlp_hidden,
            head_hidden,
            self.classes,
            attention,
            self.epochs,
            self.batch_size,
            self.lr,
            self.weight_decay,
            self.beta1,
            self.beta2,
            self.adam_eps,
            self.val_fraction,
            split,
            self.seed,
            precision,
            self.class_names.join(","),
        )
    }

    pub fn dsp(&self) -> DspConfig {
        DspConfig {
            sample_rate: self.sample_rate,
            segment_seconds: self.segment_seconds,
            n_fft: self.n_fft,
            hop: self.hop,
            window: self.window,
            n_mels: self.n_mels,
            fmin: self.fmin,
            fmax: self.fmax,
            top_db: self.top_db,
        }
    }

    pub fn model(&self) -> Result<ModelConfig> {
        if !self.class_names.is_empty() && self.class_names.len() != self.classes {
            return Err(Error::Config(format!(
                "classes = {} but class_names lists {} entries",
                self.classes,
                self.class_names.len()
            )));
        }
        if self.class_names.iter().any(|n| n.is_empty()) {
            return Err(Error::Config("class_names contains an empty name".into()));
        }
        let cfg = ModelConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            channels: self.channels,
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            memory_size: self.memory_size,
            mlp_hidden: self.mlp_hidden,
            head_hidden: self.head_hidden.clone(),
            classes: self.classes,
            attention: self.attention,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_settings(&self, reproducible: bool) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdamW {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                weight_decay: self.weight_decay,
            },
            seed: self.seed,
            reproducible,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = Config::default();
        cfg.class_names = vec!["blues".into(), "rock".into()];
        cfg.classes = 2;
        cfg.fmax = Some(8000.0);
        cfg.precision = Precision::F64;
        cfg.attention = AttentionKind::SelfAttention;
        cfg.head_hidden = vec![64];
        let text = cfg.to_text();
        let back = Config::parse_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn default_text_round_trips_with_nyquist_and_empty_lists() {
        let cfg = Config::default();
        let text = cfg.to_text();
        assert!(text.contains("fmax = nyquist"));
        assert!(text.contains("class_names = \n"));
        let back = Config::parse_text(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_blanks_and_later_wins() {
        let text = "# a comment\n\nlr = 0.01  # trailing\nlr = 0.5\nheads = 4\n";
        let cfg = Config::parse_text(text).unwrap();
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.heads, 4);
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_offender() {
        let err = Config::parse_text("learning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let err = Config::parse_text("lr = fast\n").unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
        let err = Config::parse_text("just a line\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn enumerated_values_parse_and_reject() {
        let mut cfg = Config::default();
        cfg.set("attention", "self").unwrap();
        assert_eq!(cfg.attention, AttentionKind::SelfAttention);
        cfg.set("split", "segment").unwrap();
        assert_eq!(cfg.split, SplitMode::Segment);
        cfg.set("window", "rectangular").unwrap();
        cfg.set("precision", "64").unwrap();
        cfg.set("fmax", "nyquist").unwrap();
        assert_eq!(cfg.fmax, None);
        assert!(cfg.set("attention", "linear").is_err());
        assert!(cfg.set("split", "random").is_err());
        assert!(cfg.set("precision", "16").is_err());
    }

    #[test]
    fn head_hidden_list_parses() {
        let mut cfg = Config::default();
        cfg.set("head_hidden", "2048,1024").unwrap();
        assert_eq!(cfg.head_hidden, vec![2048, 1024]);
        cfg.set("head_hidden", "").unwrap();
        assert!(cfg.head_hidden.is_empty());
        assert!(cfg.set("head_hidden", "12,abc").is_err());
    }

    #[test]
    fn model_conversion_checks_class_name_consistency() {
        let mut cfg = Config::default();
        cfg.class_names = vec!["a".into(), "b".into()];
        cfg.classes = 10;
        assert!(cfg.model().is_err());
        cfg.classes = 2;
        let model = cfg.model().unwrap();
        assert_eq!(model.classes, 2);
    }

    #[test]
    fn derived_configs_carry_the_right_fields() {
        let mut cfg = Config::default();
        cfg.set("hop", "256").unwrap();
        cfg.set("lr", "0.005").unwrap();
        cfg.set("seed", "7").unwrap();
        assert_eq!(cfg.dsp().hop, 256);
        let ts = cfg.train_settings(true);
        assert_eq!(ts.optimizer.lr, 0.005);
        assert_eq!(ts.seed, 7);
        assert!(ts.reproducible);
    }
}
