//! Flat `key = value` configuration. Later sources override earlier ones:
//! defaults, then the config file, then command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::PipelineError;
use crate::models::{PlacementConfig, SelectionConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelScale {
    Full,
    /// Desk-scale networks for smoke tests.
    Toy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dataset_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Where evaluate and generate read checkpoints; `out_dir` when unset.
    pub checkpoint_dir: Option<PathBuf>,
    pub model: ModelScale,
    /// Overrides the scale's band count.
    pub mel_bands: Option<usize>,
    /// Overrides the placement context width in beats.
    pub placement_context: Option<usize>,
    pub dropout: bool,
    pub seed: u64,
    pub placement_batch_size: usize,
    pub selection_batch_size: usize,
    pub batches_per_epoch: usize,
    pub max_epochs: usize,
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub warmup: usize,
    pub patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub threshold: f64,
    pub temperature: f64,
    pub difficulty: Option<u32>,
    pub difficulties: Option<Vec<u32>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TrainConfig::placement();
        PipelineConfig {
            dataset_dir: PathBuf::from("data"),
            cache_dir: PathBuf::from("cache"),
            out_dir: PathBuf::from("out"),
            checkpoint_dir: None,
            model: ModelScale::Full,
            mel_bands: None,
            placement_context: None,
            dropout: true,
            seed: t.seed,
            placement_batch_size: t.batch_size,
            selection_batch_size: TrainConfig::selection().batch_size,
            batches_per_epoch: t.batches_per_epoch,
            max_epochs: t.max_epochs,
            max_steps: t.max_steps,
            lr: t.lr,
            warmup: t.warmup,
            patience: t.patience,
            plateau_factor: t.plateau_factor,
            plateau_patience: t.plateau_patience,
            threshold: 0.5,
            temperature: 1.0,
            difficulty: None,
            difficulties: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(PipelineError::Config(format!(
            "{key}: expected on/off, got {value:?}"
        ))),
    }
}

/// `none` clears an optional value.
fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, PipelineError> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl PipelineConfig {
    pub fn parse_str(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Applies every `key = value` line; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<(), PipelineError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        match key {
            "dataset_dir" => self.dataset_dir = value.into(),
            "cache_dir" => self.cache_dir = value.into(),
            "out_dir" => self.out_dir = value.into(),
            "checkpoint_dir" => self.checkpoint_dir = (value != "none").then(|| value.into()),
            "model" => {
                self.model = match value {
                    "full" => ModelScale::Full,
                    "toy" => ModelScale::Toy,
                    _ => {
                        return Err(PipelineError::Config(format!(
                            "model: expected full or toy, got {value:?}"
                        )))
                    }
                }
            }
            "mel_bands" => self.mel_bands = parse_opt(key, value)?,
            "placement_context" => self.placement_context = parse_opt(key, value)?,
            "dropout" => self.dropout = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "placement_batch_size" => self.placement_batch_size = parse(key, value)?,
            "selection_batch_size" => self.selection_batch_size = parse(key, value)?,
            "batches_per_epoch" => self.batches_per_epoch = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "max_steps" => self.max_steps = parse_opt(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "plateau_factor" => self.plateau_factor = parse(key, value)?,
            "plateau_patience" => self.plateau_patience = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "difficulty" => self.difficulty = parse_opt(key, value)?,
            "difficulties" => {
                self.difficulties = if value == "none" {
                    None
                } else {
                    Some(
                        value
                            .split(',')
                            .map(|v| parse(key, v.trim()))
                            .collect::<Result<_, _>>()?,
                    )
                }
            }
            _ => return Err(PipelineError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.bands() == 0 {
            return bad("mel_bands must be positive".into());
        }
        if self.placement_config().pooled_bands() == 0 {
            return bad(format!("{} mel bands vanish after pooling", self.bands()));
        }
        if self.placement_context == Some(0) {
            return bad("placement_context must be positive".into());
        }
        if self.placement_batch_size == 0
            || self.selection_batch_size == 0
            || self.batches_per_epoch == 0
        {
            return bad("batch sizes and batches_per_epoch must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad(format!(
                "plateau_factor {} outside (0, 1]",
                self.plateau_factor
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!(
                "temperature {} must be non-negative",
                self.temperature
            ));
        }
        if let Some(d) = &self.difficulties {
            super::plan_difficulties(0, Some(d))?;
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> &Path {
        self.checkpoint_dir.as_deref().unwrap_or(&self.out_dir)
    }

    pub fn bands(&self) -> usize {
        self.mel_bands.unwrap_or(match self.model {
            ModelScale::Full => PlacementConfig::full().bands,
            ModelScale::Toy => PlacementConfig::toy().bands,
        })
    }

    pub fn placement_config(&self) -> PlacementConfig {
        let base = match self.model {
            ModelScale::Full => PlacementConfig::full(),
            ModelScale::Toy => PlacementConfig::toy(),
        };
        PlacementConfig {
            bands: self.bands(),
            context: self.placement_context.unwrap_or(base.context),
            lstm_dropout: if self.dropout { base.lstm_dropout } else { 0.0 },
            dense_dropout: if self.dropout {
                base.dense_dropout
            } else {
                0.0
            },
            ..base
        }
    }

    pub fn selection_config(&self) -> SelectionConfig {
        let base = match self.model {
            ModelScale::Full => SelectionConfig::full(),
            ModelScale::Toy => SelectionConfig::toy(),
        };
        SelectionConfig {
            bands: self.bands(),
            lstm_dropout: if self.dropout { base.lstm_dropout } else { 0.0 },
            dense_dropout: if self.dropout {
                base.dense_dropout
            } else {
                0.0
            },
            ..base
        }
    }

    fn train(&self, batch_size: usize) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            lr: self.lr,
            batch_size,
            batches_per_epoch: self.batches_per_epoch,
            max_epochs: self.max_epochs,
            max_steps: self.max_steps,
            warmup: self.warmup,
            patience: self.patience,
            plateau_factor: self.plateau_factor,
            plateau_patience: self.plateau_patience,
        }
    }

    pub fn placement_train(&self) -> TrainConfig {
        self.train(self.placement_batch_size)
    }

    pub fn selection_train(&self) -> TrainConfig {
        self.train(self.selection_batch_size)
    }

    /// The configuration in the file format; `parse_str` reads it back.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("dataset_dir", self.dataset_dir.display().to_string());
        kv("cache_dir", self.cache_dir.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv(
            "checkpoint_dir",
            opt(self
                .checkpoint_dir
                .as_ref()
                .map(|p| p.display().to_string())),
        );
        kv(
            "model",
            match self.model {
                ModelScale::Full => "full".into(),
                ModelScale::Toy => "toy".into(),
            },
        );
        kv("mel_bands", opt(self.mel_bands.map(|v| v.to_string())));
        kv(
            "placement_context",
            opt(self.placement_context.map(|v| v.to_string())),
        );
        kv("dropout", if self.dropout { "on" } else { "off" }.into());
        kv("seed", self.seed.to_string());
        kv(
            "placement_batch_size",
            self.placement_batch_size.to_string(),
        );
        kv(
            "selection_batch_size",
            self.selection_batch_size.to_string(),
        );
        kv("batches_per_epoch", self.batches_per_epoch.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("max_steps", opt(self.max_steps.map(|v| v.to_string())));
        kv("lr", self.lr.to_string());
        kv("warmup", self.warmup.to_string());
        kv("patience", self.patience.to_string());
        kv("plateau_factor", self.plateau_factor.to_string());
        kv("plateau_patience", self.plateau_patience.to_string());
        kv("threshold", self.threshold.to_string());
        kv("temperature", self.temperature.to_string());
        kv("difficulty", opt(self.difficulty.map(|v| v.to_string())));
        kv(
            "difficulties",
            opt(self
                .difficulties
                .as_ref()
                .map(|d| d.iter().map(u32::to_string).collect::<Vec<_>>().join(","))),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults_and_round_trips() {
        let cfg = PipelineConfig::parse_str(
            "# toy run\nmodel = toy\nseed = 7  # trailing comment\n\nthreshold=0.25\ndifficulties = 13, 11, 9, 7, 5\n",
        )
        .unwrap();
        assert_eq!(cfg.model, ModelScale::Toy);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.threshold, 0.25);
        assert_eq!(cfg.difficulties, Some(vec![13, 11, 9, 7, 5]));
        assert_eq!(cfg.bands(), 8);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(PipelineConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn flags_applied_after_file_win() {
        let mut cfg = PipelineConfig::parse_str("seed = 3\nmax_steps = 50\n").unwrap();
        cfg.set("seed", "9").unwrap();
        cfg.set("max_steps", "none").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.max_steps, None);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "nonsense",
            "colour = red",
            "seed = -1",
            "threshold = 1.5",
            "temperature = -1",
            "difficulties = 1,2,3",
            "model = huge",
            "mel_bands = 4",
            "dropout = maybe",
            "lr = 0",
        ] {
            assert!(
                matches!(
                    PipelineConfig::parse_str(text),
                    Err(PipelineError::Config(_))
                ),
                "{text}"
            );
        }
    }

    #[test]
    fn dropout_switch_reaches_models() {
        let cfg =
            PipelineConfig::parse_str("model = toy\ndropout = off\nplacement_context = 3").unwrap();
        let p = cfg.placement_config();
        assert_eq!((p.lstm_dropout, p.dense_dropout, p.context), (0.0, 0.0, 3));
        assert_eq!(cfg.selection_config().dense_dropout, 0.0);
        assert_eq!(
            PipelineConfig::default().placement_config(),
            PlacementConfig::full()
        );
    }
}
